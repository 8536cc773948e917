#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mfg/dynamics.hpp"
#include "mfg/harness.hpp"
#include "mfg/random.hpp"

namespace mfg {

namespace {

using json = nlohmann::json;

const char* const kReferenceJson = R"({
  "name": "reference",
  "dim": 1,
  "horizon": 1.0,
  "controls": {"lower": [-1.0], "upper": [1.0], "points": [21]},
  "drift": {"control": [[1.0]]},
  "running_payoff": {"control_cost": 1.0, "crowd_weight": 1.0},
  "terminal_payoff": {"crowd_weight": 1.0},
  "family": {"diffusion": {"scale": 1.0, "power": 1.0}},
  "initial": {"uniform_cloud": {"lower": [-1.0], "upper": [1.0], "points": [201]}},
  "n_list": [1, 2, 4, 8, 16, 32],
  "numerics": {
    "particles": 10000,
    "dt": 0.005,
    "grid_h": 0.01,
    "seed": 1,
    "tol": 0.001,
    "damping": 0.5,
    "max_iter": 30,
    "value_scheme": "semi_lagrangian"
  },
  "constants": {"M": 1.0, "K": 1.0, "R": 1.0}
}
)";

[[noreturn]] void bad(const std::string& what) { throw ValidationError("scenario: " + what); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) bad(where + " must be an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) bad("unknown key '" + item.key() + "' in " + where);
}

double number(const json& j, const std::string& what) {
  if (!j.is_number()) bad(what + " must be a number");
  return j.get<double>();
}

double number_or(const json& j, const char* key, double fallback, const std::string& where) {
  return j.contains(key) ? number(j.at(key), where + "." + key) : fallback;
}

Vec vector_of(const json& j, int dim, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != dim)
    bad(what + " must be an array of length " + std::to_string(dim));
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = number(j[i], what);
  return v;
}

Mat matrix_of(const json& j, int rows, int cols, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    bad(what + " must have " + std::to_string(rows) + " rows");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const Vec row = vector_of(j[r], cols, what);
    m.row(r) = row.transpose();
  }
  return m;
}

std::size_t count_of(const json& j, const std::string& what) {
  if (!j.is_number_integer() || j.get<long long>() <= 0) bad(what + " must be a positive integer");
  return j.get<std::size_t>();
}

ControlSet parse_controls(const json& j) {
  check_keys(j, {"lower", "upper", "points", "list"}, "controls");
  if (j.contains("list")) {
    const json& list = j.at("list");
    if (!list.is_array() || list.empty()) bad("controls.list must be a nonempty array");
    const int k = static_cast<int>(list[0].size());
    std::vector<Vec> pts;
    for (const auto& p : list) pts.push_back(vector_of(p, k, "controls.list entry"));
    return ControlSet(std::move(pts));
  }
  if (!j.contains("lower") || !j.contains("upper") || !j.contains("points"))
    bad("controls need lower, upper and points (or a list)");
  const int k = static_cast<int>(j.at("lower").size());
  const Vec lo = vector_of(j.at("lower"), k, "controls.lower");
  const Vec hi = vector_of(j.at("upper"), k, "controls.upper");
  std::vector<int> counts;
  for (const auto& c : j.at("points")) counts.push_back(static_cast<int>(count_of(c, "controls.points")));
  return ControlSet::grid(lo, hi, counts);
}

EmpiricalMeasure parse_initial(const json& j, int dim) {
  check_keys(j, {"uniform_cloud", "points", "weights"}, "initial");
  if (j.contains("uniform_cloud")) {
    const json& c = j.at("uniform_cloud");
    check_keys(c, {"lower", "upper", "points"}, "initial.uniform_cloud");
    const Vec lo = vector_of(c.at("lower"), dim, "initial.uniform_cloud.lower");
    const Vec hi = vector_of(c.at("upper"), dim, "initial.uniform_cloud.upper");
    std::vector<int> counts;
    for (const auto& n : c.at("points")) counts.push_back(static_cast<int>(count_of(n, "points")));
    if (static_cast<int>(counts.size()) != dim) bad("initial.uniform_cloud.points needs dim entries");
    // The product grid of evenly spaced points, reusing the control grid.
    return EmpiricalMeasure::uniform(ControlSet::grid(lo, hi, counts).points());
  }
  if (!j.contains("points")) bad("initial needs uniform_cloud or points");
  std::vector<Vec> pts;
  for (const auto& p : j.at("points")) pts.push_back(vector_of(p, dim, "initial.points entry"));
  if (pts.empty()) bad("initial.points is empty");
  if (!j.contains("weights")) return EmpiricalMeasure::uniform(std::move(pts));
  std::vector<double> w;
  for (const auto& x : j.at("weights")) w.push_back(number(x, "initial.weights entry"));
  return EmpiricalMeasure(std::move(pts), std::move(w));
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    bad(std::string("malformed JSON: ") + e.what());
  }
  check_keys(j,
             {"name", "dim", "horizon", "controls", "drift", "running_payoff", "terminal_payoff",
              "family", "initial", "n_list", "numerics", "constants"},
             "top level");
  Scenario sc;
  sc.source = text;
  try {
    if (j.contains("name")) sc.name = j.at("name").get<std::string>();
    if (!j.contains("dim") || !j.at("dim").is_number_integer()) bad("dim must be an integer");
    sc.dim = j.at("dim").get<int>();
    if (sc.dim < 1 || sc.dim > kMaxDim) bad("dim must be 1, 2 or 3");
    const int d = sc.dim;
    sc.horizon = number_or(j, "horizon", 1.0, "");
    if (!j.contains("controls")) bad("controls missing");
    sc.controls = parse_controls(j.at("controls"));
    const int k = sc.controls.dim();

    const json drift = j.value("drift", json::object());
    check_keys(drift, {"state", "control", "mean", "constant"}, "drift");
    sc.drift.state = drift.contains("state") ? matrix_of(drift.at("state"), d, d, "drift.state")
                                             : Mat::Zero(d, d).eval();
    sc.drift.control = drift.contains("control")
                           ? matrix_of(drift.at("control"), d, k, "drift.control")
                           : Mat::Zero(d, k).eval();
    sc.drift.mean = drift.contains("mean") ? matrix_of(drift.at("mean"), d, d, "drift.mean")
                                           : Mat::Zero(d, d).eval();
    sc.drift.constant = drift.contains("constant")
                            ? vector_of(drift.at("constant"), d, "drift.constant")
                            : zeros(d);

    const json run = j.value("running_payoff", json::object());
    check_keys(run, {"control_cost", "crowd_weight", "state_weight", "constant"}, "running_payoff");
    sc.running.control_cost = number_or(run, "control_cost", 0.0, "running_payoff");
    sc.running.crowd_weight = number_or(run, "crowd_weight", 0.0, "running_payoff");
    sc.running.state_weight = number_or(run, "state_weight", 0.0, "running_payoff");
    sc.running.constant = number_or(run, "constant", 0.0, "running_payoff");

    const json term = j.value("terminal_payoff", json::object());
    check_keys(term, {"crowd_weight", "state_weight", "linear", "abs_weight"}, "terminal_payoff");
    sc.terminal.crowd_weight = number_or(term, "crowd_weight", 0.0, "terminal_payoff");
    sc.terminal.state_weight = number_or(term, "state_weight", 0.0, "terminal_payoff");
    sc.terminal.abs_weight = number_or(term, "abs_weight", 0.0, "terminal_payoff");
    sc.terminal.linear = term.contains("linear")
                             ? vector_of(term.at("linear"), d, "terminal_payoff.linear")
                             : zeros(d);

    const json fam = j.value("family", json::object());
    check_keys(fam, {"diffusion", "jumps", "initial_shift"}, "family");
    if (fam.contains("diffusion")) {
      const json& g = fam.at("diffusion");
      check_keys(g, {"scale", "power"}, "family.diffusion");
      sc.family.diffusion_scale = number_or(g, "scale", 0.0, "family.diffusion");
      sc.family.diffusion_power = number_or(g, "power", 1.0, "family.diffusion");
    }
    if (fam.contains("jumps")) {
      for (const auto& a : fam.at("jumps")) {
        check_keys(a, {"rate", "rate_power", "displacement", "size_power"}, "family.jumps entry");
        FamilyRule::Jump jump;
        jump.rate = number_or(a, "rate", 0.0, "family.jumps");
        jump.rate_power = number_or(a, "rate_power", 0.0, "family.jumps");
        jump.size_power = number_or(a, "size_power", 0.0, "family.jumps");
        if (!a.contains("displacement")) bad("family.jumps entry needs a displacement");
        jump.displacement = vector_of(a.at("displacement"), d, "family.jumps.displacement");
        sc.family.jumps.push_back(jump);
      }
    }
    if (fam.contains("initial_shift")) {
      const json& s = fam.at("initial_shift");
      check_keys(s, {"scale", "power"}, "family.initial_shift");
      sc.family.shift = number_or(s, "scale", 0.0, "family.initial_shift");
      sc.family.shift_power = number_or(s, "power", 1.0, "family.initial_shift");
    }

    if (!j.contains("initial")) bad("initial missing");
    sc.initial = parse_initial(j.at("initial"), d);

    if (!j.contains("n_list") || !j.at("n_list").is_array()) bad("n_list must be an array");
    for (const auto& n : j.at("n_list")) sc.n_list.push_back(number(n, "n_list entry"));

    const json num = j.value("numerics", json::object());
    check_keys(num,
               {"particles", "minimax_particles", "dt", "grid_h", "half_width", "seed", "tol",
                "damping", "max_iter", "value_scheme"},
               "numerics");
    Numerics& nu = sc.numerics;
    if (num.contains("particles")) nu.particles = count_of(num.at("particles"), "numerics.particles");
    if (num.contains("minimax_particles"))
      nu.minimax_particles = count_of(num.at("minimax_particles"), "numerics.minimax_particles");
    nu.dt = number_or(num, "dt", nu.dt, "numerics");
    nu.grid_h = number_or(num, "grid_h", nu.grid_h, "numerics");
    nu.half_width = number_or(num, "half_width", nu.half_width, "numerics");
    if (num.contains("seed")) {
      if (!num.at("seed").is_number_unsigned()) bad("numerics.seed must be a nonnegative integer");
      nu.seed = num.at("seed").get<std::uint64_t>();
    }
    nu.tol = number_or(num, "tol", nu.tol, "numerics");
    nu.damping = number_or(num, "damping", nu.damping, "numerics");
    if (num.contains("max_iter")) nu.max_iter = count_of(num.at("max_iter"), "numerics.max_iter");
    if (num.contains("value_scheme")) {
      const std::string s = num.at("value_scheme").get<std::string>();
      if (s == "semi_lagrangian") nu.scheme = DiffusionScheme::semi_lagrangian;
      else if (s == "central_explicit") nu.scheme = DiffusionScheme::central_explicit;
      else bad("numerics.value_scheme must be semi_lagrangian or central_explicit");
    }

    const json con = j.value("constants", json::object());
    check_keys(con, {"M", "K", "R", "M0"}, "constants");
    sc.constants.m = number_or(con, "M", 1.0, "constants");
    sc.constants.k = number_or(con, "K", 1.0, "constants");
    sc.constants.r = number_or(con, "R", 1.0, "constants");
    sc.constants.m0 = number_or(con, "M0", 0.0, "constants");
  } catch (const json::exception& e) {
    bad(e.what());
  }
  sc.validate();
  return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read scenario file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_scenario(ss.str());
}

std::string reference_scenario_json() { return kReferenceJson; }
Scenario reference_scenario() { return parse_scenario(kReferenceJson); }

void Scenario::validate() const {
  if (!(horizon > 0.0)) bad("horizon must be positive");
  if (controls.size() == 0) bad("control set is empty");
  if (initial.dim() != dim) bad("initial measure dimension differs from dim");
  if (n_list.empty()) bad("n_list is empty");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (!(n_list[i] >= 1.0)) bad("n_list entries must be at least 1");
    if (i > 0 && !(n_list[i] > n_list[i - 1])) bad("n_list must be strictly increasing");
  }
  if (family.diffusion_scale < 0.0) bad("diffusion scale must be nonnegative");
  for (const auto& j : family.jumps)
    if (j.rate < 0.0) bad("jump rates must be nonnegative");
  if (numerics.half_width < 0.0) bad("numerics.half_width must be nonnegative");
  if (!(constants.m > 0.0)) bad("constant M must be positive");
  if (constants.k < 0.0 || constants.r < 0.0 || constants.m0 < 0.0)
    bad("constants must be nonnegative");
  iteration_config(numerics.seed).validate();
}

GeneratorSpec Scenario::limit_spec() const {
  GeneratorSpec spec;
  spec.dim = dim;
  spec.controls = controls;
  const DriftModel dm = drift;
  spec.drift = [dm](double, const Vec& x, const EmpiricalMeasure& m, const Vec& u) -> Vec {
    return dm.state * x + dm.control * u + dm.mean * m.mean() + dm.constant;
  };
  const RunningPayoffModel rp = running;
  spec.running_payoff = [rp](double, const Vec& x, const EmpiricalMeasure& m, const Vec& u) {
    return -0.5 * rp.control_cost * u.squaredNorm() - 0.5 * rp.crowd_weight * (x - m.mean()).squaredNorm() -
           0.5 * rp.state_weight * x.squaredNorm() + rp.constant;
  };
  const TerminalPayoffModel tp = terminal;
  spec.terminal_payoff = [tp](const Vec& x, const EmpiricalMeasure& m) {
    return -tp.crowd_weight * (x - m.mean()).squaredNorm() - tp.state_weight * x.squaredNorm() +
           tp.linear.dot(x) - tp.abs_weight * x.norm();
  };
  return spec;
}

GeneratorSpec Scenario::member_spec(double n) const {
  GeneratorSpec spec = limit_spec();
  if (std::isinf(n)) return spec;
  if (family.diffusion_scale > 0.0) {
    const Mat g = Mat::Identity(dim, dim) * (family.diffusion_scale *
                                             std::pow(n, -family.diffusion_power));
    spec.diffusion = [g](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return g; };
  }
  for (const auto& j : family.jumps) {
    const JumpAtom atom{j.rate * std::pow(n, j.rate_power),
                        j.displacement * std::pow(n, j.size_power)};
    if (atom.rate > 0.0)
      spec.jumps.push_back(
          [atom](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return atom; });
  }
  return spec;
}

EmpiricalMeasure Scenario::member_initial(double n) const {
  if (std::isinf(n) || family.shift == 0.0) return initial;
  const double s = family.shift * std::pow(n, -family.shift_power);
  std::vector<Vec> pts = initial.points();
  for (Vec& p : pts) p.array() += s;
  return EmpiricalMeasure(std::move(pts), initial.weights());
}

double Scenario::box_half_width() const {
  if (numerics.half_width > 0.0) return numerics.half_width;
  double support = 0.0;
  double moment = 0.0;
  for (double n : n_list) {
    const EmpiricalMeasure m = member_initial(n);
    for (const Vec& p : m.points()) support = std::max(support, p.norm());
    moment = std::max(moment, m.root_moment());
  }
  for (const Vec& p : initial.points()) support = std::max(support, p.norm());
  moment = std::max(moment, initial.root_moment());
  return 1.2 * apriori_bound(support, constants.m, horizon, moment);
}

IterationConfig Scenario::iteration_config(std::uint64_t seed) const {
  IterationConfig c;
  c.horizon = horizon;
  c.max_iter = numerics.max_iter;
  c.damping = numerics.damping;
  c.tol = numerics.tol;
  c.particles = numerics.particles;
  c.dt = numerics.dt;
  c.seed = seed;
  c.grid.h = numerics.grid_h;
  c.grid.half_width = box_half_width();
  c.grid.growth_m = constants.m;
  c.grid.scheme = numerics.scheme;
  return c;
}

std::uint64_t Scenario::member_seed(double n) const {
  return derive_seed(numerics.seed, static_cast<std::uint64_t>(std::llround(n * 1000.0)));
}

double member_epsilon(const Scenario& sc, double n) {
  const GeneratorSpec limit = sc.limit_spec();
  const GeneratorSpec member = sc.member_spec(n);
  const int per_axis = sc.dim == 1 ? 21 : (sc.dim == 2 ? 9 : 5);
  const auto sample =
      make_sample(limit, sc.box_half_width(), per_axis,
                  {EmpiricalMeasure::dirac(zeros(sc.dim)), sc.initial},
                  {0.0, 0.5 * sc.horizon, sc.horizon});
  const double eps = epsilon_estimate({member}, limit, sample).front();
  const double w = wasserstein2(sc.member_initial(n), sc.initial);
  return std::min(1.0, std::max(eps, w * w));
}

}  // namespace mfg
