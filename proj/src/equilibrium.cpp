#include "mfg/equilibrium.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mfg/dynamics.hpp"
#include "mfg/parallel.hpp"
#include "mfg/random.hpp"

namespace mfg {

namespace {
constexpr std::uint64_t kMixtureTag = 0x5EED'0001;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}
}  // namespace

void IterationConfig::validate() const {
  if (!(horizon > 0.0)) throw ValidationError("horizon must be positive");
  if (!(damping > 0.0 && damping <= 1.0)) throw ValidationError("damping must lie in (0, 1]");
  if (!(tol >= 0.0)) throw ValidationError("tolerance must be nonnegative");
  if (max_iter == 0) throw ValidationError("max_iter must be at least 1");
  if (particles == 0) throw ValidationError("particle count must be positive");
  if (!(dt > 0.0) || dt > horizon) throw ValidationError("dt must lie in (0, T]");
  const double steps = horizon / dt;
  if (std::abs(steps - std::round(steps)) > 1e-6)
    throw ValidationError("dt must divide the horizon");
  if (!(grid.h > 0.0)) throw ValidationError("grid spacing must be positive");
}

TimeGrid IterationConfig::time_grid() const {
  return TimeGrid::uniform(horizon, static_cast<std::size_t>(std::llround(horizon / dt)));
}

EmpiricalMeasure mixture_resample(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double beta,
                                  std::size_t n, std::uint64_t seed) {
  if (a.dim() != b.dim()) throw ValidationError("mixture components differ in dimension");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("mixture weight must lie in [0, 1]");
  if (n == 0) throw ValidationError("resample size must be positive");
  struct Atom {
    const Vec* x;
    double w;
  };
  std::vector<Atom> atoms;
  atoms.reserve(a.size() + b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.weight(i) > 0.0 && beta < 1.0) atoms.push_back({&a.point(i), (1.0 - beta) * a.weight(i)});
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.weight(i) > 0.0 && beta > 0.0) atoms.push_back({&b.point(i), beta * b.weight(i)});

  if (a.dim() == 1)
    std::stable_sort(atoms.begin(), atoms.end(),
                     [](const Atom& l, const Atom& r) { return (*l.x)(0) < (*r.x)(0); });
  CounterRng rng(seed, kMixtureTag);
  const double total = std::accumulate(atoms.begin(), atoms.end(), 0.0,
                                       [](double s, const Atom& at) { return s + at.w; });
  std::vector<Vec> out;
  out.reserve(n);
  double cum = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double level = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(n) * total;
    while (j + 1 < atoms.size() && cum + atoms[j].w <= level) cum += atoms[j++].w;
    out.push_back(*atoms[j].x);
  }
  return EmpiricalMeasure::uniform(std::move(out));
}

namespace {

FlowOfProbabilities mix_flows(const FlowOfProbabilities& current, const FlowOfProbabilities& response,
                              double beta, std::size_t n, std::uint64_t seed, std::size_t iteration,
                              const EmpiricalMeasure& initial) {
  std::vector<EmpiricalMeasure> ms(current.size());
  ms[0] = initial;
  parallel_for(current.size() - 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin + 1; k < end + 1; ++k) {
      ms[k] = mixture_resample(current.at_node(k), response.at_node(k), beta, n,
                               derive_seed(seed, iteration * 1'000'003ULL + k));
    }
  });
  return FlowOfProbabilities(current.time_grid(), std::move(ms));
}

SimulationConfig simulation_of(const IterationConfig& config) {
  SimulationConfig sim;
  sim.particles = config.particles;
  sim.dt = config.dt;
  sim.seed = config.seed;
  sim.start_time = 0.0;
  return sim;
}

}  // namespace

EquilibriumSolution solve_stochastic_mfg(const GeneratorSpec& spec, const EmpiricalMeasure& m0,
                                         const IterationConfig& config) {
  config.validate();
  spec.validate();
  if (m0.dim() != spec.dim) throw ValidationError("initial measure dimension differs from the spec");
  const TimeGrid grid = config.time_grid();
  const SimulationConfig sim = simulation_of(config);

  EquilibriumSolution sol;
  sol.config = config;
  sol.initial = EmpiricalMeasure::uniform(sample_initial(m0, config.particles, config.seed));

  FlowOfProbabilities zeta = empirical_flow(
      simulate_interacting(spec, ControlPolicy::constant(spec.controls.smallest()), grid, m0, sim),
      grid);

  for (std::size_t k = 0; k < config.max_iter; ++k) {
    const auto start = std::chrono::steady_clock::now();
    ValueGrid value = solve_stochastic_value(spec, zeta, config.grid);
    PathEnsemble ens = simulate(spec, grid_feedback(value), zeta, m0, sim);
    const FlowOfProbabilities eta = empirical_flow(ens, grid);
    FlowOfProbabilities next =
        mix_flows(zeta, eta, config.damping, config.particles, config.seed, k, sol.initial);

    IterationRecord rec;
    rec.iteration = k + 1;
    rec.increment = sup_w2(next, zeta);
    rec.feet_outside_margin = value.diagnostics.feet_outside_margin;
    rec.seconds = seconds_since(start);
    sol.diagnostics.history.push_back(rec);

    sol.value = std::move(value);
    sol.ensemble = std::move(ens);
    sol.flow = zeta;
    if (rec.increment < config.tol) {
      sol.diagnostics.converged = true;
      break;
    }
    zeta = std::move(next);
  }
  return sol;
}

namespace {

PathMeasure feedback_paths(const GeneratorSpec& det, const FlowOfProbabilities& mu,
                           const FeedbackFn& feedback, const EmpiricalMeasure& initial) {
  std::vector<Trajectory> paths(initial.size());
  parallel_for(initial.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p)
      paths[p] = integrate_feedback(det, mu, 0, initial.point(p), feedback);
  });
  return PathMeasure(std::move(paths), initial.weights());
}

FlowOfProbabilities pushforward_flow(const PathMeasure& chi) {
  std::vector<EmpiricalMeasure> ms;
  ms.reserve(chi.time_grid().size());
  for (std::size_t i = 0; i < chi.time_grid().size(); ++i) ms.push_back(pushforward_at_node(chi, i));
  return FlowOfProbabilities(chi.time_grid(), std::move(ms));
}

}  // namespace

EquilibriumSolution solve_minimax_mfg(const GeneratorSpec& spec, const EmpiricalMeasure& m0,
                                      const IterationConfig& config) {
  config.validate();
  const GeneratorSpec det = spec.deterministic_part();
  det.validate();
  if (m0.dim() != det.dim) throw ValidationError("initial measure dimension differs from the spec");
  const TimeGrid grid = config.time_grid();
  const SimulationConfig sim = simulation_of(config);

  EquilibriumSolution sol;
  sol.config = config;
  sol.initial = EmpiricalMeasure::uniform(sample_initial(m0, config.particles, config.seed));

  FlowOfProbabilities mu = empirical_flow(
      simulate_interacting(det, ControlPolicy::constant(det.controls.smallest()), grid, m0, sim),
      grid);

  for (std::size_t k = 0; k < config.max_iter; ++k) {
    const auto start = std::chrono::steady_clock::now();
    ValueGrid value = solve_deterministic_value(det, mu, config.grid);
    PathMeasure chi = feedback_paths(det, mu, exact_feedback(value, det, mu), sol.initial);
    FlowOfProbabilities eta = pushforward_flow(chi);
    FlowOfProbabilities next =
        mix_flows(mu, eta, config.damping, config.particles, config.seed, k, sol.initial);

    IterationRecord rec;
    rec.iteration = k + 1;
    rec.increment = sup_w2(next, mu);
    rec.feet_outside_margin = value.diagnostics.feet_outside_margin;
    rec.seconds = seconds_since(start);
    sol.diagnostics.history.push_back(rec);

    sol.value = std::move(value);
    sol.flow = std::move(eta);
    sol.chi = std::move(chi);
    if (rec.increment < config.tol) {
      sol.diagnostics.converged = true;
      break;
    }
    mu = std::move(next);
  }
  return sol;
}

double path_identity_gap(const EquilibriumSolution& sol, const GeneratorSpec& spec,
                         const Trajectory& path, double* signed_at_max) {
  const std::size_t last = path.x.size() - 1;
  const double terminal =
      spec.terminal_payoff(path.x[last], sol.flow.at_node(sol.flow.size() - 1)) + path.z[last];
  double worst = 0.0, signed_worst = 0.0;
  for (std::size_t i = path.start_index; i <= last; ++i) {
    const double gap = evaluate(sol.value, path.time_grid[i], path.x[i]) - (terminal - path.z[i]);
    if (std::abs(gap) > worst) {
      worst = std::abs(gap);
      signed_worst = gap;
    }
  }
  if (signed_at_max) *signed_at_max = signed_worst;
  return worst;
}

MinimaxReport verify_minimax(const EquilibriumSolution& sol, const GeneratorSpec& spec, double tol) {
  if (!sol.chi) throw ValidationError("minimax verification needs a trajectory measure");
  MinimaxReport r;
  r.tolerance = tol;
  r.initial_w2 = wasserstein2(sol.flow.at_node(0), sol.initial);
  for (std::size_t i = 0; i < sol.flow.size(); ++i) {
    r.pushforward_w2 = std::max(
        r.pushforward_w2, wasserstein2(sol.flow.at_node(i), pushforward_at_node(*sol.chi, i)));
  }
  const auto& paths = sol.chi->paths();
  std::vector<double> gaps(paths.size()), signs(paths.size());
  parallel_for(paths.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p)
      gaps[p] = path_identity_gap(sol, spec, paths[p], &signs[p]);
  });
  for (std::size_t p = 0; p < paths.size(); ++p) {
    if (gaps[p] > r.max_path_gap) {
      r.max_path_gap = gaps[p];
      r.signed_gap_at_max = signs[p];
      r.worst_path = p;
    }
  }
  // Exact zero up to the round-off of the distance computation.
  r.initial_ok = r.initial_w2 <= 1e-9;
  r.pushforward_ok = r.pushforward_w2 <= 1e-9;
  r.path_ok = r.max_path_gap <= tol;
  return r;
}

ProbabilisticReport verify_probabilistic(const EquilibriumSolution& sol, const GeneratorSpec& spec,
                                         const std::vector<ControlPolicy>& policies,
                                         const ProbabilisticCheckConfig& config) {
  ProbabilisticReport r;
  r.tolerance = config.tol;
  const ControlPolicy optimal = grid_feedback(sol.value);

  // Achieved value under the extracted policy.
  bool achieved_ok = true;
  for (const auto& [s, xi] : config.starts) {
    SimulationConfig sim = config.simulation;
    sim.start_time = s;
    const PathEnsemble ens = simulate(spec, optimal, sol.flow, EmpiricalMeasure::dirac(xi), sim);
    const MeanWithError pay = realized_payoff(ens, spec, sol.flow);
    const double gap = std::abs(pay.mean - evaluate(sol.value, s, xi));
    if (gap > r.achieved_gap) {
      r.achieved_gap = gap;
      r.achieved_se = pay.std_err;
    }
    achieved_ok = achieved_ok && gap <= config.tol + 3.0 * pay.std_err;
  }
  r.achieved_ok = achieved_ok;

  // Flow consistency against a re-simulation with the solution's own sample.
  SimulationConfig sim;
  sim.particles = sol.config.particles;
  sim.dt = sol.config.dt;
  sim.seed = sol.config.seed;
  sim.initial_points = sol.initial.points();
  const PathEnsemble ens = simulate(spec, optimal, sol.flow, sol.initial, sim);
  r.flow_w2 = sup_w2(sol.flow, empirical_flow(ens, sol.flow.time_grid()));
  r.flow_ok = r.flow_w2 <= config.tol;

  DeviationConfig dev;
  dev.starts = config.starts;
  dev.simulation = config.simulation;
  r.deviation = check_deviation(sol.value, spec, sol.flow, policies, dev);
  r.deviation_ok = r.deviation.max_gap <= config.tol + 3.0 * r.deviation.std_err_at_max;
  return r;
}

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void expect_word(std::istream& is, const char* word, const char* what) {
  std::string w;
  if (!(is >> w) || w != word)
    throw ValidationError(std::string(what) + ": expected '" + word + "'");
}

void write_measure_body(std::ostream& os, const EmpiricalMeasure& m) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << num(m.weight(i));
    for (int a = 0; a < m.dim(); ++a) os << ' ' << num(m.point(i)(a));
    os << '\n';
  }
}

EmpiricalMeasure read_measure_body(std::istream& is, int dim, std::size_t count) {
  std::vector<Vec> pts(count, Vec(dim));
  std::vector<double> w(count);
  for (std::size_t i = 0; i < count; ++i) {
    is >> w[i];
    for (int a = 0; a < dim; ++a) is >> pts[i](a);
  }
  if (!is) throw ValidationError("measure data truncated");
  return EmpiricalMeasure(std::move(pts), std::move(w));
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw ValidationError("cannot write " + p.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ValidationError("cannot read " + p.string());
  return is;
}

}  // namespace

void write_flow(std::ostream& os, const FlowOfProbabilities& flow) {
  os << "flow 1\ndim " << flow.dim() << " nodes " << flow.size() << '\n';
  for (std::size_t i = 0; i < flow.size(); ++i) {
    os << "node " << i << ' ' << num(flow.time_grid()[i]) << ' ' << flow.at_node(i).size() << '\n';
    write_measure_body(os, flow.at_node(i));
  }
}

FlowOfProbabilities read_flow(std::istream& is) {
  expect_word(is, "flow", "flow file");
  int version = 0, dim = 0;
  std::size_t nodes = 0;
  is >> version;
  expect_word(is, "dim", "flow file");
  is >> dim;
  expect_word(is, "nodes", "flow file");
  is >> nodes;
  if (!is || version != 1 || nodes < 2) throw ValidationError("flow file: bad header");
  std::vector<double> times(nodes);
  std::vector<EmpiricalMeasure> ms;
  for (std::size_t i = 0; i < nodes; ++i) {
    std::size_t index = 0, count = 0;
    expect_word(is, "node", "flow file");
    is >> index >> times[i] >> count;
    if (!is || index != i) throw ValidationError("flow file: bad node record");
    ms.push_back(read_measure_body(is, dim, count));
  }
  return FlowOfProbabilities(TimeGrid(std::move(times)), std::move(ms));
}

void write_chi(std::ostream& os, const PathMeasure& chi) {
  const TimeGrid& g = chi.time_grid();
  os << "chi 1\ndim " << chi.paths().front().dim() << " paths " << chi.size() << " nodes "
     << g.size() << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) os << (i ? " " : "") << num(g[i]);
  os << '\n';
  for (std::size_t p = 0; p < chi.size(); ++p) {
    const Trajectory& tr = chi.paths()[p];
    os << "path " << p << ' ' << num(chi.weights()[p]) << ' ' << tr.start_index << '\n';
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (int a = 0; a < tr.dim(); ++a) os << num(tr.x[i](a)) << ' ';
      os << num(tr.z[i]) << '\n';
    }
  }
}

PathMeasure read_chi(std::istream& is) {
  expect_word(is, "chi", "chi file");
  int version = 0, dim = 0;
  std::size_t n_paths = 0, nodes = 0;
  is >> version;
  expect_word(is, "dim", "chi file");
  is >> dim;
  expect_word(is, "paths", "chi file");
  is >> n_paths;
  expect_word(is, "nodes", "chi file");
  is >> nodes;
  if (!is || version != 1 || n_paths == 0 || nodes < 2) throw ValidationError("chi file: bad header");
  std::vector<double> times(nodes);
  for (double& t : times) is >> t;
  const TimeGrid grid(std::move(times));
  std::vector<Trajectory> paths(n_paths);
  std::vector<double> weights(n_paths);
  for (std::size_t p = 0; p < n_paths; ++p) {
    std::size_t index = 0;
    expect_word(is, "path", "chi file");
    is >> index >> weights[p] >> paths[p].start_index;
    if (!is || index != p) throw ValidationError("chi file: bad path record");
    paths[p].time_grid = grid;
    paths[p].x.assign(nodes, Vec(dim));
    paths[p].z.assign(nodes, 0.0);
    for (std::size_t i = 0; i < nodes; ++i) {
      for (int a = 0; a < dim; ++a) is >> paths[p].x[i](a);
      is >> paths[p].z[i];
    }
    if (!is) throw ValidationError("chi file: truncated data");
  }
  return PathMeasure(std::move(paths), std::move(weights));
}

void write_solution(const std::filesystem::path& dir, const EquilibriumSolution& sol) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_out(dir / "value.txt");
    write_value_grid(os, sol.value);
  }
  {
    auto os = open_out(dir / "flow.txt");
    write_flow(os, sol.flow);
  }
  {
    auto os = open_out(dir / "initial.txt");
    os << "measure 1\ndim " << sol.initial.dim() << " size " << sol.initial.size() << '\n';
    write_measure_body(os, sol.initial);
  }
  if (sol.chi) {
    auto os = open_out(dir / "chi.txt");
    write_chi(os, *sol.chi);
  }
  nlohmann::ordered_json j;
  const IterationConfig& c = sol.config;
  j["kind"] = sol.chi ? "minimax" : "stochastic";
  j["config"] = {{"horizon", c.horizon},     {"max_iter", c.max_iter}, {"damping", c.damping},
                 {"tol", c.tol},             {"particles", c.particles}, {"dt", c.dt},
                 {"seed", c.seed},           {"grid_h", c.grid.h},
                 {"half_width", sol.value.lattice().half_width()},
                 {"scheme", c.grid.scheme == DiffusionScheme::central_explicit ? "central_explicit"
                                                                              : "semi_lagrangian"}};
  j["converged"] = sol.diagnostics.converged;
  auto& hist = j["history"] = nlohmann::ordered_json::array();
  for (const auto& r : sol.diagnostics.history) {
    hist.push_back({{"iteration", r.iteration},
                    {"increment", r.increment},
                    {"feet_outside_margin", r.feet_outside_margin},
                    {"seconds", r.seconds}});
  }
  j["checks"] = sol.diagnostics.checks;
  auto os = open_out(dir / "diagnostics.json");
  os << j.dump(2) << '\n';
}

EquilibriumSolution read_solution(const std::filesystem::path& dir) {
  EquilibriumSolution sol;
  {
    auto is = open_in(dir / "value.txt");
    sol.value = read_value_grid(is);
  }
  {
    auto is = open_in(dir / "flow.txt");
    sol.flow = read_flow(is);
  }
  {
    auto is = open_in(dir / "initial.txt");
    int dim = 0;
    std::size_t size = 0, version = 0;
    expect_word(is, "measure", "initial file");
    is >> version;
    expect_word(is, "dim", "initial file");
    is >> dim;
    expect_word(is, "size", "initial file");
    is >> size;
    if (!is || version != 1) throw ValidationError("initial file: bad header");
    sol.initial = read_measure_body(is, dim, size);
  }
  if (std::filesystem::exists(dir / "chi.txt")) {
    auto is = open_in(dir / "chi.txt");
    sol.chi = read_chi(is);
  }
  auto is = open_in(dir / "diagnostics.json");
  nlohmann::json j;
  try {
    is >> j;
    const auto& c = j.at("config");
    sol.config.horizon = c.at("horizon").get<double>();
    sol.config.max_iter = c.at("max_iter").get<std::size_t>();
    sol.config.damping = c.at("damping").get<double>();
    sol.config.tol = c.at("tol").get<double>();
    sol.config.particles = c.at("particles").get<std::size_t>();
    sol.config.dt = c.at("dt").get<double>();
    sol.config.seed = c.at("seed").get<std::uint64_t>();
    sol.config.grid.h = c.at("grid_h").get<double>();
    sol.config.grid.half_width = c.at("half_width").get<double>();
    sol.config.grid.scheme = c.at("scheme").get<std::string>() == "central_explicit"
                                 ? DiffusionScheme::central_explicit
                                 : DiffusionScheme::semi_lagrangian;
    sol.diagnostics.converged = j.at("converged").get<bool>();
    for (const auto& r : j.at("history")) {
      IterationRecord rec;
      rec.iteration = r.at("iteration").get<std::size_t>();
      rec.increment = r.at("increment").get<double>();
      rec.feet_outside_margin = r.at("feet_outside_margin").get<std::size_t>();
      rec.seconds = r.at("seconds").get<double>();
      sol.diagnostics.history.push_back(rec);
    }
    sol.diagnostics.checks = j.at("checks").get<std::map<std::string, double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("diagnostics.json: " + std::string(e.what()));
  }
  return sol;
}

}  // namespace mfg
