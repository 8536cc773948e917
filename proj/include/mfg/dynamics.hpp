#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mfg/generator.hpp"
#include "mfg/measures.hpp"

namespace mfg {

/// Piecewise-constant open-loop control: one control index per grid interval.
struct PiecewiseControl {
  TimeGrid time_grid;
  std::vector<std::size_t> values;

  static PiecewiseControl constant(const TimeGrid& grid, std::size_t control);
  void validate(const ControlSet& controls) const;
};

/// max over U of <p, f> + g.
double hamiltonian(const GeneratorSpec& spec, double t, const Vec& x, const EmpiricalMeasure& m,
                   const Vec& p);
/// Maximizer of <p, f> + g; lowest enumeration index on ties.
std::size_t argmax_control(const GeneratorSpec& spec, double t, const Vec& x,
                           const EmpiricalMeasure& m, const Vec& p);

/// Integrates x' = f(t, x, mu[t], v(t)) from (s, xi) with classical RK4 on the
/// flow's grid, mu frozen at the left node of each step, and accumulates
/// z = int_s^t g by the trapezoidal rule. Nodes before s hold xi and z = 0.
Trajectory integrate_characteristic(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                                    double s, const Vec& xi, const PiecewiseControl& v);

/// Control chosen at the left node of each step from the current state.
using FeedbackFn = std::function<std::size_t(std::size_t node, const Vec& x)>;

/// Same scheme as integrate_characteristic, with the control sampled from a
/// feedback rule at each step and held over it. `controls_out`, if given,
/// receives the realized control per step.
Trajectory integrate_feedback(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                              std::size_t start_node, const Vec& xi, const FeedbackFn& feedback,
                              std::vector<std::size_t>* controls_out = nullptr);

/// Trajectories for a deterministic dictionary of piecewise-constant
/// controls: the constant controls first, then random switching controls
/// drawn from a stream seeded by `seed`.
std::vector<Trajectory> reachable_cloud(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                                        double s, const Vec& xi, std::size_t n_controls,
                                        std::uint64_t seed = 0);

/// (||xi|| + M T + M T sup_t s(mu[t])) e^{M T}.
double apriori_bound(double xi_norm, double growth_m, double horizon, double sup_root_moment);

double sup_root_moment(const FlowOfProbabilities& mu);

}  // namespace mfg
