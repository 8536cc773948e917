#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mfg/equilibrium.hpp"
#include "mfg/generator.hpp"
#include "mfg/measures.hpp"

namespace mfg {

/// f = A x + B u + C mean(m) + c.
struct DriftModel {
  Mat state, control, mean;
  Vec constant;
};

/// g = -a |u|^2 / 2 - b |x - mean(m)|^2 / 2 - c |x|^2 / 2 + d.
struct RunningPayoffModel {
  double control_cost = 0.0;
  double crowd_weight = 0.0;
  double state_weight = 0.0;
  double constant = 0.0;
};

/// sigma = -b |x - mean(m)|^2 - c |x|^2 + <l, x> - e ||x||.
struct TerminalPayoffModel {
  double crowd_weight = 0.0;
  double state_weight = 0.0;
  Vec linear;
  double abs_weight = 0.0;
};

/// Member n of the family: G^n = scale n^-power I, jump atoms with rate
/// lambda n^rate_power at displacement y n^size_power, and m0^n = m0 shifted
/// by shift n^-shift_power along every axis.
struct FamilyRule {
  double diffusion_scale = 0.0;
  double diffusion_power = 1.0;
  struct Jump {
    double rate = 0.0;
    double rate_power = 0.0;
    Vec displacement;
    double size_power = 0.0;
  };
  std::vector<Jump> jumps;
  double shift = 0.0;
  double shift_power = 1.0;
};

struct Numerics {
  std::size_t particles = 10000;
  /// Particles for the deterministic reference solution (0: same as above).
  std::size_t minimax_particles = 0;
  double dt = 0.005;
  double grid_h = 0.01;
  /// 0 selects the a priori box.
  double half_width = 0.0;
  std::uint64_t seed = 1;
  double tol = 1e-3;
  double damping = 0.5;
  std::size_t max_iter = 30;
  DiffusionScheme scheme = DiffusionScheme::semi_lagrangian;
};

/// Growth (M), Lipschitz (K) and payoff (R) constants; M0 bounds the
/// initial second moments (0: computed from the family).
struct DeclaredConstants {
  double m = 1.0;
  double k = 1.0;
  double r = 1.0;
  double m0 = 0.0;
};

struct Scenario {
  std::string name = "scenario";
  int dim = 1;
  double horizon = 1.0;
  ControlSet controls;
  DriftModel drift;
  RunningPayoffModel running;
  TerminalPayoffModel terminal;
  FamilyRule family;
  EmpiricalMeasure initial;
  std::vector<double> n_list;
  Numerics numerics;
  DeclaredConstants constants;
  /// Scenario file text, copied into solution directories.
  std::string source;

  void validate() const;
  GeneratorSpec limit_spec() const;
  GeneratorSpec member_spec(double n) const;
  EmpiricalMeasure member_initial(double n) const;
  /// Box half-width shared by every value grid of a study: the declared one,
  /// else 1.2 times the a priori bound with s(m0) standing in for the flow
  /// moment.
  double box_half_width() const;
  IterationConfig iteration_config(std::uint64_t seed) const;
  /// Seed of member n, derived from the master seed.
  std::uint64_t member_seed(double n) const;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::filesystem::path& path);

/// The in-repo reference game: 1-D crowd aversion with vanishing Brownian
/// noise G^n = I/n.
Scenario reference_scenario();
std::string reference_scenario_json();

/// Epsilon_n: the noise and squared drift distances to the limit over a
/// sample, and W2^2(m0^n, m0), capped at 1.
double member_epsilon(const Scenario& sc, double n);

/// Deterministic controls integrated along the Y^n paths: same initial
/// points, same realized controls, interacting through their own law.
PathEnsemble coupled_process(const GeneratorSpec& limit, const PathEnsemble& y,
                             const TimeGrid& coarse_grid);

struct CouplingStats {
  double coupled_distance = 0.0;  // max_t mean ||Y - X||^2
  double law_distance_sq = 0.0;   // max_t W2^2(Law Y, Law X)
};
CouplingStats coupling_stats(const PathEnsemble& y, const PathEnsemble& x);

struct BoundConstants {
  double c1 = 0.0;
  double c3 = 0.0;
  double c5 = 0.0;
};
BoundConstants bound_constants(double m0, double m, double k, double horizon);

struct BoundsAudit {
  double n = 0.0;
  double epsilon = 0.0;
  GrowthAudit growth;
  BoundConstants constants;
  double m0 = 0.0;
  double moment_max = 0.0;   // max_t second moment of zeta^n[t]
  double admissible_ratio = 0.0;  // worst E|Y(t)|^2 / (C3 (1 + E|Y(s)|^2))
  double coupled_distance = 0.0;  // max_t E|Y - X|^2
  double c5_fit = 0.0;       // max_t W2^2(Law Y, Law X) / eps
  double c6_fit = 0.0;       // max_t E|Y - X|^2 / (eps (1 + s^2(m0^n)))
  double margin = 0.1;
  bool c1_ok = false;
  bool c3_ok = false;
  bool c5_ok = false;
  bool converged = false;
};

/// Solves the stochastic game at member n, builds the coupled process and
/// checks the moment and distance bounds. Throws ValidationError if the
/// declared M fails the sampled growth audit.
BoundsAudit run_bounds_audit(const Scenario& sc, double n);

struct ConvergenceRow {
  double n = 0.0;
  double epsilon = 0.0;
  double sup_w2 = 0.0;
  double value_error = 0.0;
  double coupled_distance = 0.0;
  double c5_fit = 0.0;
  double c6_fit = 0.0;
  double moment_max = 0.0;
  bool c1_ok = false;
  bool c3_ok = false;
  std::size_t iterations = 0;
  bool converged = false;
  double final_increment = 0.0;
  double seconds = 0.0;
};

struct NoiseFloor {
  double sup_w2 = 0.0;
  double value_error = 0.0;
  double seed_w2 = 0.0;     // sup_t W2 between the two seed runs
  double seed_value = 0.0;  // weighted value gap between the two seed runs
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  NoiseFloor floor;
  BoundConstants constants;
  std::size_t minimax_iterations = 0;
  bool minimax_converged = false;
  double minimax_seconds = 0.0;
  /// Single constant with coupled_distance <= C eps_n over all rows.
  double fitted_c6 = 0.0;
};

struct StudyOptions {
  /// Directory for CSV, plot data and per-n artifacts; empty skips output.
  std::filesystem::path out_dir;
  bool write_artifacts = true;
};

ConvergenceReport run_convergence_study(const Scenario& sc, const StudyOptions& options = {});

/// Fixed column order; numbers printed with %.9e so reruns compare bytewise.
void write_report_csv(std::ostream& os, const ConvergenceReport& report);
void write_floor_csv(std::ostream& os, const ConvergenceReport& report);

/// sup over the grid of |V1 - V2| / (1 + |x|^2); both grids must share the
/// lattice and time grid.
double weighted_value_error(const ValueGrid& a, const ValueGrid& b);

/// Constant controls first, then random piecewise-constant open-loop
/// controls switching on random intervals.
std::vector<ControlPolicy> policy_dictionary(const ControlSet& controls, const TimeGrid& grid,
                                             std::size_t count, std::uint64_t seed);

/// Checks used by `verify` on a stochastic solution: starts at s in {0, T/2}
/// and xi = mean +- one standard deviation along the first axis, a fifth of
/// the particles (at least 200) on a fresh seed, tolerance 3 (h + dt).
ProbabilisticCheckConfig default_check_config(const Scenario& sc, const EquilibriumSolution& sol);

/// Command-line entry point; returns the process exit code.
int cli_dispatch(int argc, const char* const* argv);

}  // namespace mfg
