#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <variant>
#include <vector>

#include "mfg/dynamics.hpp"
#include "mfg/generator.hpp"
#include "mfg/measures.hpp"

namespace mfg {

/// Feedback rule (t, x, m) -> control index, or a fixed open-loop control.
class ControlPolicy {
 public:
  using Rule = std::function<std::size_t(double t, const Vec& x, const EmpiricalMeasure& m)>;

  static ControlPolicy feedback(Rule rule);
  static ControlPolicy open_loop(PiecewiseControl control);
  static ControlPolicy constant(std::size_t control);

  std::size_t operator()(double t, const Vec& x, const EmpiricalMeasure& m) const;

 private:
  std::variant<Rule, PiecewiseControl, std::size_t> rule_;
};

/// Simulated particle paths on the fine grid. Storage is path-major:
/// entry (path p, node k) lives at p * nodes + k.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t start_index, std::size_t paths, int dim,
               std::uint64_t seed, double dt);

  const TimeGrid& time_grid() const { return grid_; }
  std::size_t start_index() const { return start_; }
  std::size_t paths() const { return paths_; }
  std::size_t nodes() const { return grid_.size(); }
  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  double dt() const { return dt_; }

  Vec state(std::size_t p, std::size_t k) const;
  void set_state(std::size_t p, std::size_t k, const Vec& x);
  /// Running payoff accumulated from the start node up to node k.
  double payoff(std::size_t p, std::size_t k) const { return payoff_[p * nodes() + k]; }
  double& payoff(std::size_t p, std::size_t k) { return payoff_[p * nodes() + k]; }
  /// Control index used on the step leaving node k.
  std::size_t control(std::size_t p, std::size_t k) const { return controls_[p * nodes() + k]; }
  void set_control(std::size_t p, std::size_t k, std::size_t u) {
    controls_[p * nodes() + k] = static_cast<std::uint16_t>(u);
  }
  /// True if a jump occurred on the step arriving at node k.
  bool jumped(std::size_t p, std::size_t k) const { return jumped_[p * nodes() + k] != 0; }
  void set_jumped(std::size_t p, std::size_t k) { jumped_[p * nodes() + k] = 1; }

  /// Uniform empirical measure of the states at fine node k.
  EmpiricalMeasure law_at(std::size_t k) const;

 private:
  TimeGrid grid_;
  std::size_t start_ = 0;
  std::size_t paths_ = 0;
  int dim_ = 1;
  std::uint64_t seed_ = 0;
  double dt_ = 0.0;
  std::vector<double> states_;
  std::vector<double> payoff_;
  std::vector<std::uint16_t> controls_;
  std::vector<std::uint8_t> jumped_;
};

struct SimulationConfig {
  std::size_t particles = 1000;
  double dt = 1e-2;
  std::uint64_t seed = 0;
  /// Paths start at this time (a node of the coarse grid).
  double start_time = 0.0;
  /// If nonempty, particle p starts at initial_points[p] instead of a draw
  /// from m0; the size must equal `particles`.
  std::vector<Vec> initial_points;
};

/// Euler-Maruyama with Bernoulli thinning of jump atoms and explicit
/// small-jump compensation; coefficients see zeta at the left coarse node.
PathEnsemble simulate(const GeneratorSpec& spec, const ControlPolicy& policy,
                      const FlowOfProbabilities& zeta, const EmpiricalMeasure& m0,
                      const SimulationConfig& config);

/// Same scheme with the coefficients seeing the particles' own empirical law
/// at the left coarse node (interacting-particle approximation).
PathEnsemble simulate_interacting(const GeneratorSpec& spec, const ControlPolicy& policy,
                                  const TimeGrid& coarse_grid, const EmpiricalMeasure& m0,
                                  const SimulationConfig& config);

/// Inverse-CDF draws from a weighted cloud, one counter stream per particle.
std::vector<Vec> sample_initial(const EmpiricalMeasure& m0, std::size_t n, std::uint64_t seed);

/// Node-wise uniform empirical measures at the coarse nodes (which must be
/// nodes of the simulation grid).
FlowOfProbabilities empirical_flow(const PathEnsemble& ens, const TimeGrid& coarse_grid);

struct MeanWithError {
  double mean = 0.0;
  double std_err = 0.0;
};

/// Sample mean over paths of phi(Y(t)) - phi(Y(s)) - sum_k L phi(Y(t_k)) dt_k
/// with the realized controls and zeta at the left coarse node.
MeanWithError martingale_residual(const PathEnsemble& ens, const GeneratorSpec& spec,
                                  const FlowOfProbabilities& zeta, const TestFunction& phi,
                                  double s, double t);

/// Per-path total payoff sigma(Y(T), zeta[T]) + int_s^T g, with its mean and SE.
MeanWithError realized_payoff(const PathEnsemble& ens, const GeneratorSpec& spec,
                              const FlowOfProbabilities& zeta);

/// Columnar dump: header line then one record per (path, node) with
/// t, x..., z, u, jump.
void write_ensemble(std::ostream& os, const PathEnsemble& ens, const ControlSet& controls);

}  // namespace mfg
