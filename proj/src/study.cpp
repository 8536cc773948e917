#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "mfg/harness.hpp"
#include "mfg/parallel.hpp"
#include "mfg/random.hpp"

namespace mfg {

namespace {

constexpr std::uint64_t kFloorTag = 0xF100'0000ULL;
constexpr std::uint64_t kDictionaryTag = 0xD1C7'0000ULL;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9e", x);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw ValidationError("cannot write " + p.string());
  return os;
}

}  // namespace

PathEnsemble coupled_process(const GeneratorSpec& limit, const PathEnsemble& y,
                             const TimeGrid& coarse_grid) {
  const TimeGrid& grid = y.time_grid();
  PathEnsemble x(grid, y.start_index(), y.paths(), y.dim(), y.seed(), y.dt());
  const std::size_t s = y.start_index();
  for (std::size_t p = 0; p < y.paths(); ++p) x.set_state(p, s, y.state(p, s));

  std::size_t cached_coarse = TimeGrid::npos;
  EmpiricalMeasure law;
  for (std::size_t k = s; k + 1 < grid.size(); ++k) {
    const double t = grid[k];
    const double dt = grid[k + 1] - t;
    const std::size_t coarse = coarse_grid.interval(t);
    if (coarse != cached_coarse) {
      // Law at the left coarse node, as for the interacting simulation.
      const std::size_t fine = grid.find(coarse_grid[coarse]);
      if (fine == TimeGrid::npos) throw ValidationError("coarse node is not a path node");
      law = x.law_at(std::max(fine, s));
      cached_coarse = coarse;
    }
    parallel_for(y.paths(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t p = begin; p < end; ++p) {
        const std::size_t u = y.control(p, k);
        const Vec xk = x.state(p, k);
        x.set_control(p, k, u);
        x.set_state(p, k + 1, xk + dt * limit.drift(t, xk, law, limit.controls[u]));
      }
    });
  }
  return x;
}

CouplingStats coupling_stats(const PathEnsemble& y, const PathEnsemble& x) {
  if (y.paths() != x.paths() || y.nodes() != x.nodes())
    throw ValidationError("coupled ensembles differ in shape");
  CouplingStats st;
  for (std::size_t k = y.start_index(); k < y.nodes(); ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < y.paths(); ++p) acc += (y.state(p, k) - x.state(p, k)).squaredNorm();
    st.coupled_distance = std::max(st.coupled_distance, acc / static_cast<double>(y.paths()));
    const double w = wasserstein2(y.law_at(k), x.law_at(k));
    st.law_distance_sq = std::max(st.law_distance_sq, w * w);
  }
  return st;
}

BoundConstants bound_constants(double m0, double m, double k, double horizon) {
  BoundConstants c;
  const double t = horizon;
  c.c1 = (m0 + 2.0 * m * t) * std::exp(7.0 * m * t);
  c.c3 = 2.0 * m * t * (1.0 + c.c1) * std::exp(5.0 * m * t);
  const double c1p = 1.0 + 2.0 * c.c1;
  const double c6p = 0.5 + c.c1;
  const double c8p = c1p + c6p;
  const double c7p = 5.0 * k + 5.0;
  const double c9p = std::exp(c7p * t) * k;
  const double c10p = std::exp(c7p * t) * c8p;
  c.c5 = c10p * t * std::exp(c9p * t);
  return c;
}

namespace {

double initial_moment_bound(const Scenario& sc) {
  if (sc.constants.m0 > 0.0) return sc.constants.m0;
  double m0 = second_moment(sc.initial);
  for (double n : sc.n_list) m0 = std::max(m0, second_moment(sc.member_initial(n)));
  return m0;
}

std::vector<double> node_moments(const PathEnsemble& ens, const TimeGrid& coarse) {
  std::vector<double> out;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const std::size_t k = ens.time_grid().find(coarse[i]);
    double acc = 0.0;
    for (std::size_t p = 0; p < ens.paths(); ++p) acc += ens.state(p, k).squaredNorm();
    out.push_back(acc / static_cast<double>(ens.paths()));
  }
  return out;
}

/// Worst E|Y(t)|^2 / (C3 (1 + E|Y(s)|^2)) over s <= t.
double admissible_ratio(const std::vector<double>& m2, double c3) {
  double worst = 0.0, running_min = std::numeric_limits<double>::infinity();
  for (double v : m2) {
    running_min = std::min(running_min, v);
    worst = std::max(worst, v / (c3 * (1.0 + running_min)));
  }
  return worst;
}

/// Moment, admissibility and coupling checks for a solved member.
BoundsAudit audit_solution(const Scenario& sc, double n, const EquilibriumSolution& sol) {
  BoundsAudit a;
  a.n = n;
  a.m0 = initial_moment_bound(sc);
  a.constants = bound_constants(a.m0, sc.constants.m, sc.constants.k, sc.horizon);
  a.epsilon = member_epsilon(sc, n);
  a.converged = sol.diagnostics.converged;
  const GeneratorSpec member = sc.member_spec(n);
  const TimeGrid& grid = sol.flow.time_grid();

  for (const auto& m : sol.flow.measures()) a.moment_max = std::max(a.moment_max, second_moment(m));
  a.c1_ok = a.moment_max <= (1.0 + a.margin) * a.constants.c1;

  // Admissible processes: the best response and the extreme constant controls.
  const EmpiricalMeasure m0n = sc.member_initial(n);
  SimulationConfig sim;
  sim.particles = sol.config.particles;
  sim.dt = sol.config.dt;
  sim.seed = sol.config.seed;
  a.admissible_ratio = admissible_ratio(node_moments(*sol.ensemble, grid), a.constants.c3);
  for (std::size_t u : {std::size_t{0}, sc.controls.size() - 1}) {
    const PathEnsemble ens = simulate(member, ControlPolicy::constant(u), sol.flow, m0n, sim);
    a.admissible_ratio =
        std::max(a.admissible_ratio, admissible_ratio(node_moments(ens, grid), a.constants.c3));
  }
  a.c3_ok = a.admissible_ratio <= 1.0 + a.margin;

  const PathEnsemble x = coupled_process(sc.limit_spec(), *sol.ensemble, grid);
  const CouplingStats st = coupling_stats(*sol.ensemble, x);
  auto fit = [&](double lhs, double scale) {
    if (a.epsilon > 0.0) return lhs / (a.epsilon * scale);
    return lhs <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
  };
  a.coupled_distance = st.coupled_distance;
  a.c5_fit = fit(st.law_distance_sq, 1.0);
  a.c6_fit = fit(st.coupled_distance, 1.0 + second_moment(m0n));
  a.c5_ok = a.c5_fit <= a.constants.c5;
  return a;
}

std::vector<EvalPoint> growth_sample(const Scenario& sc, const GeneratorSpec& spec) {
  const int per_axis = sc.dim == 1 ? 21 : (sc.dim == 2 ? 9 : 5);
  return make_sample(spec, sc.box_half_width(), per_axis,
                     {EmpiricalMeasure::dirac(zeros(sc.dim)), sc.initial},
                     {0.0, 0.5 * sc.horizon, sc.horizon});
}

}  // namespace

BoundsAudit run_bounds_audit(const Scenario& sc, double n) {
  const GeneratorSpec member = sc.member_spec(n);
  GrowthAudit growth = audit_growth(member, sc.constants.m, growth_sample(sc, member));
  if (!growth.passed)
    throw ValidationError("declared M fails the growth audit, bounds would be meaningless: " +
                          growth.message);
  const EquilibriumSolution sol =
      solve_stochastic_mfg(member, sc.member_initial(n), sc.iteration_config(sc.member_seed(n)));
  BoundsAudit a = audit_solution(sc, n, sol);
  a.growth = std::move(growth);
  return a;
}

double weighted_value_error(const ValueGrid& a, const ValueGrid& b) {
  const SpaceLattice& la = a.lattice();
  const SpaceLattice& lb = b.lattice();
  if (!(a.time_grid() == b.time_grid()) || la.size() != lb.size() ||
      std::abs(la.half_width() - lb.half_width()) > 1e-12 || la.dim() != lb.dim())
    throw ValidationError("value grids differ in shape");
  std::vector<double> weight(la.size());
  for (std::size_t j = 0; j < la.size(); ++j) weight[j] = 1.0 + la.node(j).squaredNorm();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.time_grid().size(); ++i)
    for (std::size_t j = 0; j < la.size(); ++j)
      worst = std::max(worst, std::abs(a.at(i, j) - b.at(i, j)) / weight[j]);
  return worst;
}

std::vector<ControlPolicy> policy_dictionary(const ControlSet& controls, const TimeGrid& grid,
                                             std::size_t count, std::uint64_t seed) {
  std::vector<ControlPolicy> out;
  for (std::size_t u = 0; u < controls.size() && out.size() < count; ++u)
    out.push_back(ControlPolicy::constant(u));
  const std::size_t steps = grid.steps();
  for (std::uint64_t i = 0; out.size() < count; ++i) {
    CounterRng rng(derive_seed(seed, kDictionaryTag), i);
    const auto period = 1 + static_cast<std::size_t>(rng.uniform() * std::max<std::size_t>(1, steps / 4));
    PiecewiseControl pc;
    pc.time_grid = grid;
    pc.values.resize(steps);
    std::size_t current = 0;
    for (std::size_t k = 0; k < steps; ++k) {
      if (k % period == 0)
        current = std::min(controls.size() - 1,
                           static_cast<std::size_t>(rng.uniform() * static_cast<double>(controls.size())));
      pc.values[k] = current;
    }
    out.push_back(ControlPolicy::open_loop(std::move(pc)));
  }
  return out;
}

namespace {

void write_flow_summary(std::ostream& os, const FlowOfProbabilities& flow) {
  os << "t";
  for (int a = 0; a < flow.dim(); ++a) os << ",mean_" << a;
  os << ",second_moment";
  if (flow.dim() == 1) os << ",q05,q50,q95";
  os << '\n';
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const EmpiricalMeasure& m = flow.at_node(i);
    os << sci(flow.time_grid()[i]);
    for (int a = 0; a < flow.dim(); ++a) os << ',' << sci(m.mean()(a));
    os << ',' << sci(second_moment(m));
    if (flow.dim() == 1) {
      std::vector<std::pair<double, double>> pw;
      for (std::size_t p = 0; p < m.size(); ++p) pw.emplace_back(m.point(p)(0), m.weight(p));
      std::sort(pw.begin(), pw.end());
      for (double q : {0.05, 0.5, 0.95}) {
        double cum = 0.0;
        double v = pw.back().first;
        for (const auto& [x, w] : pw) {
          cum += w;
          if (cum >= q) {
            v = x;
            break;
          }
        }
        os << ',' << sci(v);
      }
    }
    os << '\n';
  }
}

void write_member_artifacts(const std::filesystem::path& dir, const EquilibriumSolution& sol) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_out(dir / "value.txt");
    write_value_grid(os, sol.value);
  }
  {
    auto os = open_out(dir / "flow_summary.csv");
    write_flow_summary(os, sol.flow);
  }
  nlohmann::ordered_json j;
  j["converged"] = sol.diagnostics.converged;
  auto& hist = j["history"] = nlohmann::ordered_json::array();
  for (const auto& r : sol.diagnostics.history)
    hist.push_back({{"iteration", r.iteration},
                    {"increment", r.increment},
                    {"feet_outside_margin", r.feet_outside_margin}});
  auto os = open_out(dir / "diagnostics.json");
  os << j.dump(2) << '\n';
}

std::string n_label(double n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", n);
  return buf;
}

}  // namespace

ConvergenceReport run_convergence_study(const Scenario& sc, const StudyOptions& options) {
  sc.validate();
  ConvergenceReport report;
  const GeneratorSpec limit = sc.limit_spec();
  const bool write = !options.out_dir.empty();
  if (write) std::filesystem::create_directories(options.out_dir);

  std::vector<double> eps;
  for (double n : sc.n_list) eps.push_back(member_epsilon(sc, n));
  for (std::size_t i = 1; i < eps.size(); ++i)
    if (eps[i] > eps[i - 1] * (1.0 + 1e-12))
      throw ValidationError("epsilon_n must not increase along n_list");

  // Deterministic reference solution.
  auto start = std::chrono::steady_clock::now();
  IterationConfig mm = sc.iteration_config(sc.numerics.seed);
  if (sc.numerics.minimax_particles > 0) mm.particles = sc.numerics.minimax_particles;
  const EquilibriumSolution star = solve_minimax_mfg(limit, sc.initial, mm);
  report.minimax_iterations = star.diagnostics.history.size();
  report.minimax_converged = star.diagnostics.converged;
  report.minimax_seconds = seconds_since(start);
  if (write && options.write_artifacts) write_member_artifacts(options.out_dir / "minimax", star);

  // Noise floor: the limit family itself under two seeds.
  EquilibriumSolution floor_runs[2];
  for (int i = 0; i < 2; ++i) {
    floor_runs[i] = solve_stochastic_mfg(limit, sc.initial,
                                         sc.iteration_config(derive_seed(sc.numerics.seed, kFloorTag + i)));
    report.floor.sup_w2 = std::max(report.floor.sup_w2, sup_w2(floor_runs[i].flow, star.flow));
    report.floor.value_error =
        std::max(report.floor.value_error, weighted_value_error(floor_runs[i].value, star.value));
  }
  report.floor.seed_w2 = sup_w2(floor_runs[0].flow, floor_runs[1].flow);
  report.floor.seed_value = weighted_value_error(floor_runs[0].value, floor_runs[1].value);

  report.constants = bound_constants(initial_moment_bound(sc), sc.constants.m, sc.constants.k,
                                     sc.horizon);
  for (std::size_t i = 0; i < sc.n_list.size(); ++i) {
    const double n = sc.n_list[i];
    start = std::chrono::steady_clock::now();
    const EquilibriumSolution sol = solve_stochastic_mfg(sc.member_spec(n), sc.member_initial(n),
                                                         sc.iteration_config(sc.member_seed(n)));
    const BoundsAudit audit = audit_solution(sc, n, sol);

    ConvergenceRow row;
    row.n = n;
    row.epsilon = eps[i];
    row.sup_w2 = sup_w2(sol.flow, star.flow);
    row.value_error = weighted_value_error(sol.value, star.value);
    row.coupled_distance = audit.coupled_distance;
    row.c5_fit = audit.c5_fit;
    row.c6_fit = audit.c6_fit;
    row.moment_max = audit.moment_max;
    row.c1_ok = audit.c1_ok;
    row.c3_ok = audit.c3_ok;
    row.iterations = sol.diagnostics.history.size();
    row.converged = sol.diagnostics.converged;
    row.final_increment = sol.diagnostics.last_increment();
    row.seconds = seconds_since(start);
    report.rows.push_back(row);
    if (row.epsilon > 0.0)
      report.fitted_c6 = std::max(report.fitted_c6, row.coupled_distance / row.epsilon);
    if (write && options.write_artifacts)
      write_member_artifacts(options.out_dir / ("n_" + n_label(n)), sol);
  }

  if (write) {
    {
      auto os = open_out(options.out_dir / "report.csv");
      write_report_csv(os, report);
    }
    {
      auto os = open_out(options.out_dir / "floor.csv");
      write_floor_csv(os, report);
    }
    auto series = [&](const char* file, auto column) {
      auto os = open_out(options.out_dir / file);
      for (const auto& r : report.rows) os << sci(r.n) << ' ' << sci(column(r)) << '\n';
    };
    series("plot_sup_w2.dat", [](const ConvergenceRow& r) { return r.sup_w2; });
    series("plot_value_error.dat", [](const ConvergenceRow& r) { return r.value_error; });
    series("plot_coupled_distance.dat", [](const ConvergenceRow& r) { return r.coupled_distance; });
    series("plot_epsilon.dat", [](const ConvergenceRow& r) { return r.epsilon; });
    auto os = open_out(options.out_dir / "timings.csv");
    os << "stage,seconds\n";
    os << "minimax," << report.minimax_seconds << '\n';
    for (const auto& r : report.rows) os << "n_" << n_label(r.n) << ',' << r.seconds << '\n';
  }
  return report;
}

ProbabilisticCheckConfig default_check_config(const Scenario& sc, const EquilibriumSolution& sol) {
  ProbabilisticCheckConfig cfg;
  cfg.tol = 3.0 * (sol.config.grid.h + sol.config.dt);
  const Vec mean = sol.initial.mean();
  const double spread = std::sqrt(std::max(0.0, second_moment(sol.initial) - mean.squaredNorm()));
  for (double s : {0.0, 0.5 * sc.horizon})
    for (double k : {-1.0, 0.0, 1.0}) {
      Vec xi = mean;
      xi(0) += k * spread;
      cfg.starts.emplace_back(s, xi);
    }
  cfg.simulation.particles = std::max<std::size_t>(200, sol.config.particles / 5);
  cfg.simulation.dt = sol.config.dt;
  cfg.simulation.seed = sol.config.seed + 1;
  return cfg;
}

void write_report_csv(std::ostream& os, const ConvergenceReport& report) {
  os << "n,epsilon,sup_w2,value_error,coupled_distance,c5_fit,c6_fit,moment_max,c1_bound,"
        "c1_ok,c3_ok,iterations,converged,final_increment\n";
  for (const auto& r : report.rows) {
    os << sci(r.n) << ',' << sci(r.epsilon) << ',' << sci(r.sup_w2) << ',' << sci(r.value_error)
       << ',' << sci(r.coupled_distance) << ',' << sci(r.c5_fit) << ',' << sci(r.c6_fit) << ','
       << sci(r.moment_max) << ',' << sci(report.constants.c1) << ',' << (r.c1_ok ? 1 : 0) << ','
       << (r.c3_ok ? 1 : 0) << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ','
       << sci(r.final_increment) << '\n';
  }
}

void write_floor_csv(std::ostream& os, const ConvergenceReport& report) {
  os << "quantity,sup_w2,value_error\n";
  os << "limit_vs_minimax," << sci(report.floor.sup_w2) << ',' << sci(report.floor.value_error)
     << '\n';
  os << "seed_vs_seed," << sci(report.floor.seed_w2) << ',' << sci(report.floor.seed_value) << '\n';
  os << "c5_bound," << sci(report.constants.c5) << ",\n";
  os << "fitted_c6," << sci(report.fitted_c6) << ",\n";
}

}  // namespace mfg
