#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfg/harness.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

namespace {

using ojson = nlohmann::ordered_json;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> particles;
  std::optional<double> dt;
  std::optional<double> grid_h;
};

struct Options {
  std::string scenario;
  std::string out;
  std::string solution;
  std::optional<double> n;
  std::optional<double> tol;
  int threads = 0;
  Overrides overrides;
};

Scenario load_with_overrides(const Options& opt) {
  Scenario sc = load_scenario(opt.scenario);
  const Overrides& o = opt.overrides;
  if (o.seed) sc.numerics.seed = *o.seed;
  if (o.particles) sc.numerics.particles = *o.particles;
  if (o.dt) sc.numerics.dt = *o.dt;
  if (o.grid_h) sc.numerics.grid_h = *o.grid_h;
  sc.validate();
  return sc;
}

std::filesystem::path output_dir(const Options& opt) {
  if (!opt.out.empty()) return opt.out;
  if (const char* env = std::getenv("MFGLAB_OUT_DIR"); env && *env) return env;
  return "results";
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw ValidationError("cannot write " + p.string());
  os << text;
}

ojson audit_json(const BoundsAudit& a) {
  return {{"n", a.n},
          {"epsilon", a.epsilon},
          {"M0", a.m0},
          {"growth_passed", a.growth.passed},
          {"worst_drift_ratio", a.growth.worst_drift_ratio},
          {"worst_noise_ratio", a.growth.worst_noise_ratio},
          {"C1", a.constants.c1},
          {"C3", a.constants.c3},
          {"C5", a.constants.c5},
          {"moment_max", a.moment_max},
          {"admissible_ratio", a.admissible_ratio},
          {"coupled_distance", a.coupled_distance},
          {"C5_fit", a.c5_fit},
          {"C6_fit", a.c6_fit},
          {"margin", a.margin},
          {"C1_ok", a.c1_ok},
          {"C3_ok", a.c3_ok},
          {"C5_ok", a.c5_ok},
          {"converged", a.converged}};
}

double member_n(const Options& opt, const Scenario& sc) { return opt.n ? *opt.n : sc.n_list.front(); }

int cmd_simulate(const Options& opt) {
  const Scenario sc = load_with_overrides(opt);
  const double n = member_n(opt, sc);
  const GeneratorSpec spec = sc.member_spec(n);
  const IterationConfig cfg = sc.iteration_config(sc.member_seed(n));
  SimulationConfig sim;
  sim.particles = cfg.particles;
  sim.dt = cfg.dt;
  sim.seed = cfg.seed;
  const PathEnsemble ens = simulate_interacting(
      spec, ControlPolicy::constant(spec.controls.smallest()), cfg.time_grid(), sc.member_initial(n), sim);
  const auto dir = output_dir(opt);
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "ensemble.txt");
  if (!os) throw ValidationError("cannot write " + (dir / "ensemble.txt").string());
  write_ensemble(os, ens, spec.controls);
  const EmpiricalMeasure last = ens.law_at(ens.nodes() - 1);
  std::printf("simulate: n=%g particles=%zu steps=%zu final second moment %.6g -> %s\n", n,
              ens.paths(), ens.nodes() - 1, second_moment(last), dir.string().c_str());
  return 0;
}

int cmd_solve(const Options& opt, bool minimax) {
  const Scenario sc = load_with_overrides(opt);
  EquilibriumSolution sol;
  double n = 0.0;
  if (minimax) {
    sol = solve_minimax_mfg(sc.limit_spec(), sc.initial, sc.iteration_config(sc.numerics.seed));
  } else {
    n = member_n(opt, sc);
    sol = solve_stochastic_mfg(sc.member_spec(n), sc.member_initial(n),
                               sc.iteration_config(sc.member_seed(n)));
    sol.diagnostics.checks["n"] = n;
  }
  const auto dir = output_dir(opt);
  write_solution(dir, sol);
  write_text(dir / "scenario.json", sc.source);
  std::printf("%s: %s after %zu iterations, last increment %.3e -> %s\n",
              minimax ? "solve-minimax" : "solve-mfg",
              sol.diagnostics.converged ? "converged" : "not converged",
              sol.diagnostics.history.size(), sol.diagnostics.last_increment(),
              dir.string().c_str());
  return 0;
}

int cmd_verify(const Options& opt) {
  const std::filesystem::path dir = opt.solution;
  Options scenario_opt = opt;
  scenario_opt.scenario = (dir / "scenario.json").string();
  const Scenario sc = load_with_overrides(scenario_opt);
  const EquilibriumSolution sol = read_solution(dir);
  const double budget = 3.0 * (sol.config.grid.h + sol.config.dt);
  const double tol = opt.tol ? *opt.tol : budget;
  ojson j;
  bool passed = false;
  if (sol.chi) {
    const MinimaxReport r = verify_minimax(sol, sc.limit_spec(), tol);
    passed = r.passed();
    j = {{"kind", "minimax"},          {"tolerance", tol},
         {"initial_w2", r.initial_w2}, {"pushforward_w2", r.pushforward_w2},
         {"max_path_gap", r.max_path_gap}, {"worst_path", r.worst_path},
         {"initial_ok", r.initial_ok}, {"pushforward_ok", r.pushforward_ok},
         {"path_ok", r.path_ok},       {"passed", passed}};
  } else {
    const auto it = sol.diagnostics.checks.find("n");
    const double n = it != sol.diagnostics.checks.end() ? it->second : sc.n_list.front();
    const GeneratorSpec spec = sc.member_spec(n);
    ProbabilisticCheckConfig cfg = default_check_config(sc, sol);
    cfg.tol = tol;
    const auto policies = policy_dictionary(sc.controls, sol.flow.time_grid(), 50, sol.config.seed);
    const ProbabilisticReport r = verify_probabilistic(sol, spec, policies, cfg);
    passed = r.passed();
    j = {{"kind", "stochastic"},
         {"n", n},
         {"tolerance", tol},
         {"achieved_gap", r.achieved_gap},
         {"achieved_se", r.achieved_se},
         {"flow_w2", r.flow_w2},
         {"deviation_max_gap", r.deviation.max_gap},
         {"deviation_se_at_max", r.deviation.std_err_at_max},
         {"achieved_ok", r.achieved_ok},
         {"flow_ok", r.flow_ok},
         {"deviation_ok", r.deviation_ok},
         {"passed", passed}};
  }
  write_text(dir / "verify.json", j.dump(2) + "\n");
  std::printf("verify: %s (%s solution, tolerance %.3e) -> %s\n", passed ? "all checks pass" : "FAILED",
              sol.chi ? "minimax" : "stochastic", tol, (dir / "verify.json").string().c_str());
  return passed ? 0 : 2;
}

int cmd_converge(const Options& opt) {
  const Scenario sc = load_with_overrides(opt);
  StudyOptions so;
  so.out_dir = output_dir(opt);
  const ConvergenceReport r = run_convergence_study(sc, so);
  write_text(so.out_dir / "scenario.json", sc.source);
  const auto& first = r.rows.front();
  const auto& last = r.rows.back();
  std::printf("converge: %zu members, sup W2 %.3e -> %.3e, value error %.3e -> %.3e, floor %.3e -> %s\n",
              r.rows.size(), first.sup_w2, last.sup_w2, first.value_error, last.value_error,
              std::max(r.floor.sup_w2, r.floor.seed_w2), so.out_dir.string().c_str());
  return 0;
}

int cmd_audit(const Options& opt) {
  const Scenario sc = load_with_overrides(opt);
  const double n = member_n(opt, sc);
  const BoundsAudit a = run_bounds_audit(sc, n);
  const auto dir = output_dir(opt);
  std::filesystem::create_directories(dir);
  write_text(dir / "audit.json", audit_json(a).dump(2) + "\n");
  std::printf("audit-bounds: n=%g C1 %s (%.3g <= %.3g), C3 %s, C5 %s (fit %.3g <= %.3g)\n", n,
              a.c1_ok ? "ok" : "FAILED", a.moment_max, a.constants.c1, a.c3_ok ? "ok" : "FAILED",
              a.c5_ok ? "ok" : "FAILED", a.c5_fit, a.constants.c5);
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"Mean field games with vanishing noise: solvers, verification and studies"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--threads", opt.threads, "Worker threads (default: MFGLAB_THREADS or 1)");

  auto common = [&](CLI::App* sub, bool needs_scenario) {
    auto* s = sub->add_option("--scenario", opt.scenario, "Scenario JSON file");
    if (needs_scenario) s->required();
    sub->add_option("--out", opt.out, "Output directory (default: MFGLAB_OUT_DIR or results)");
    sub->add_option("--seed", opt.overrides.seed, "Master seed override");
    sub->add_option("--particles", opt.overrides.particles, "Particle count override");
    sub->add_option("--dt", opt.overrides.dt, "Time step override");
    sub->add_option("--grid-h", opt.overrides.grid_h, "Space step override");
  };
  auto* simulate_cmd = app.add_subcommand("simulate", "Simulate the free flow of member n");
  common(simulate_cmd, true);
  simulate_cmd->add_option("--n", opt.n, "Family member (default: first of n_list)");
  auto* solve_cmd = app.add_subcommand("solve-mfg", "Solve the stochastic game of member n");
  common(solve_cmd, true);
  solve_cmd->add_option("--n", opt.n, "Family member (default: first of n_list)");
  auto* minimax_cmd = app.add_subcommand("solve-minimax", "Solve the deterministic limit game");
  common(minimax_cmd, true);
  auto* verify_cmd = app.add_subcommand("verify", "Check a stored solution");
  verify_cmd->add_option("--solution", opt.solution, "Solution directory")->required();
  verify_cmd->add_option("--tol", opt.tol, "Tolerance (default: 3 (h + dt))");
  auto* converge_cmd = app.add_subcommand("converge", "Run the convergence study");
  common(converge_cmd, true);
  auto* audit_cmd = app.add_subcommand("audit-bounds", "Audit the moment and distance bounds");
  common(audit_cmd, true);
  audit_cmd->add_option("--n", opt.n, "Family member (default: first of n_list)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (opt.threads > 0) set_thread_count(opt.threads);

  try {
    if (*simulate_cmd) return cmd_simulate(opt);
    if (*solve_cmd) return cmd_solve(opt, false);
    if (*minimax_cmd) return cmd_solve(opt, true);
    if (*verify_cmd) return cmd_verify(opt);
    if (*converge_cmd) return cmd_converge(opt);
    if (*audit_cmd) return cmd_audit(opt);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace mfg
