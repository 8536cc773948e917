#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfg/generator.hpp"
#include "mfg/measures.hpp"
#include "mfg/simulator.hpp"
#include "mfg/value.hpp"

namespace mfg {

struct IterationConfig {
  double horizon = 1.0;
  std::size_t max_iter = 30;
  /// Weight of the new best-response flow in the mixture, in (0, 1].
  double damping = 0.5;
  /// Stop once sup_t W2(zeta_{k+1}[t], zeta_k[t]) < tol.
  double tol = 1e-3;
  std::size_t particles = 1000;
  /// Flow grid step; also the simulation step.
  double dt = 1e-2;
  std::uint64_t seed = 0;
  GridConfig grid;

  void validate() const;
  TimeGrid time_grid() const;
};

struct IterationRecord {
  std::size_t iteration = 0;
  double increment = 0.0;  // sup_t W2 between successive flows
  std::size_t feet_outside_margin = 0;
  double seconds = 0.0;
};

struct EquilibriumDiagnostics {
  std::vector<IterationRecord> history;
  bool converged = false;
  /// Named scalar checks attached after solving (residuals, gaps, audits).
  std::map<std::string, double> checks;

  double last_increment() const { return history.empty() ? 0.0 : history.back().increment; }
};

struct EquilibriumSolution {
  ValueGrid value;
  FlowOfProbabilities flow;
  /// Sampled initial measure m0^n (flow at t = 0 equals it).
  EmpiricalMeasure initial;
  /// Deterministic case: the particle trajectories with payoff component.
  std::optional<PathMeasure> chi;
  /// Stochastic case: the best-response paths against `flow`, with their
  /// realized controls.
  std::optional<PathEnsemble> ensemble;
  IterationConfig config;
  EquilibriumDiagnostics diagnostics;
};

/// Resamples (1 - beta) a + beta b to n equally weighted points by stratified
/// resampling: one level drawn uniformly inside each stratum [i/n, (i+1)/n).
/// Atoms are sorted first in 1-D. A fixed offset would keep picking the same
/// component whenever a and b interleave, so the offsets come from `seed`.
EmpiricalMeasure mixture_resample(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double beta,
                                  std::size_t n, std::uint64_t seed);

/// Damped Picard iteration on the flow, starting from the free flow (all
/// particles on the minimal-norm control, interacting through their own law).
EquilibriumSolution solve_stochastic_mfg(const GeneratorSpec& spec, const EmpiricalMeasure& m0,
                                         const IterationConfig& config);

/// Same loop with the deterministic value and feedback characteristics; the
/// returned flow is the pushforward of chi.
EquilibriumSolution solve_minimax_mfg(const GeneratorSpec& spec, const EmpiricalMeasure& m0,
                                      const IterationConfig& config);

struct MinimaxReport {
  double initial_w2 = 0.0;
  double pushforward_w2 = 0.0;
  /// max over paths and nodes of |V(s, x(s)) - (sigma + z(T) - z(s))|
  double max_path_gap = 0.0;
  /// Signed V - realized at that maximum; positive means the path does worse
  /// than the value.
  double signed_gap_at_max = 0.0;
  std::size_t worst_path = 0;
  double tolerance = 0.0;
  bool initial_ok = false;
  bool pushforward_ok = false;
  bool path_ok = false;
  bool passed() const { return initial_ok && pushforward_ok && path_ok; }
};

MinimaxReport verify_minimax(const EquilibriumSolution& sol, const GeneratorSpec& spec, double tol);

/// Residual of the along-path identity for one trajectory against (V, flow).
double path_identity_gap(const EquilibriumSolution& sol, const GeneratorSpec& spec,
                         const Trajectory& path, double* signed_at_max = nullptr);

struct ProbabilisticCheckConfig {
  double tol = 0.0;
  std::vector<std::pair<double, Vec>> starts;
  SimulationConfig simulation;
};

struct ProbabilisticReport {
  double achieved_gap = 0.0;  // max |payoff - V| under the extracted policy
  double achieved_se = 0.0;
  double flow_w2 = 0.0;       // sup_t W2(flow, re-simulated law)
  DeviationReport deviation;
  double tolerance = 0.0;
  bool achieved_ok = false;
  bool flow_ok = false;
  bool deviation_ok = false;
  bool passed() const { return achieved_ok && flow_ok && deviation_ok; }
};

/// The re-simulation uses the solution's own seed and particle count, so a
/// converged fixed point reproduces its flow up to the iteration residual.
ProbabilisticReport verify_probabilistic(const EquilibriumSolution& sol, const GeneratorSpec& spec,
                                         const std::vector<ControlPolicy>& policies,
                                         const ProbabilisticCheckConfig& config);

/// value.txt, flow.txt, initial.txt, chi.txt (if any), diagnostics.json.
void write_solution(const std::filesystem::path& dir, const EquilibriumSolution& sol);
EquilibriumSolution read_solution(const std::filesystem::path& dir);

void write_flow(std::ostream& os, const FlowOfProbabilities& flow);
FlowOfProbabilities read_flow(std::istream& is);
void write_chi(std::ostream& os, const PathMeasure& chi);
PathMeasure read_chi(std::istream& is);

}  // namespace mfg
