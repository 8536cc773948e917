#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "mfg/generator.hpp"
#include "mfg/measures.hpp"
#include "mfg/simulator.hpp"

namespace mfg {

/// Rectangular lattice over [-L, L]^d with spacing h. Interpolation is
/// multilinear; outside the box each axis continues the boundary cell
/// linearly.
class SpaceLattice {
 public:
  SpaceLattice() = default;
  /// L is rounded up to a multiple of h.
  SpaceLattice(int dim, double half_width, double h);

  int dim() const { return dim_; }
  double half_width() const { return half_width_; }
  double spacing() const { return h_; }
  std::size_t per_axis() const { return per_axis_; }
  std::size_t size() const { return size_; }

  Vec node(std::size_t index) const;
  std::size_t nearest(const Vec& x) const;
  double interpolate(std::span<const double> values, const Vec& x) const;
  /// Largest per-axis distance from x to the box (0 inside).
  double excursion(const Vec& x) const;

 private:
  int dim_ = 1;
  double half_width_ = 1.0;
  double h_ = 0.1;
  std::size_t per_axis_ = 0;
  std::size_t size_ = 0;
  std::size_t stride_[kMaxDim] = {1, 1, 1};
};

struct ValueDiagnostics {
  std::size_t feet_outside_margin = 0;
  double max_excursion = 0.0;
};

/// V(t_i, x_j) on the flow's time grid and a space lattice, optionally with
/// the maximizing control index at every (step, node).
class ValueGrid {
 public:
  ValueGrid() = default;
  ValueGrid(TimeGrid time, SpaceLattice lattice);

  const TimeGrid& time_grid() const { return time_; }
  const SpaceLattice& lattice() const { return lattice_; }
  std::span<const double> slice(std::size_t i) const {
    return {values_.data() + i * lattice_.size(), lattice_.size()};
  }
  std::span<double> slice(std::size_t i) {
    return {values_.data() + i * lattice_.size(), lattice_.size()};
  }
  double at(std::size_t i, std::size_t node) const { return values_[i * lattice_.size() + node]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool has_policy() const { return !policy_.empty(); }
  std::size_t policy_at(std::size_t step, std::size_t node) const {
    return policy_[step * lattice_.size() + node];
  }
  std::vector<std::uint16_t>& policy() { return policy_; }
  const std::vector<std::uint16_t>& policy() const { return policy_; }

  ValueDiagnostics diagnostics;

 private:
  TimeGrid time_;
  SpaceLattice lattice_;
  std::vector<double> values_;
  std::vector<std::uint16_t> policy_;
};

enum class DiffusionScheme {
  /// Diffusion through 2d interpolated points x + b dt +- sqrt(d dt) sigma_k;
  /// monotone for any dt.
  semi_lagrangian,
  /// Upwind drift and central second differences at the node; explicit,
  /// needs dt (sum G_ii / h^2 + sum |b_a| / h + sum lambda) <= 0.45.
  central_explicit,
};

struct GridConfig {
  /// Box half-width; 0 selects 1.2 times the a priori trajectory bound.
  double half_width = 0.0;
  double h = 0.01;
  /// Growth constant used for the automatic box.
  double growth_m = 1.0;
  /// Feet further than this fraction of L outside the box are counted.
  double extrapolation_margin = 0.5;
  DiffusionScheme scheme = DiffusionScheme::semi_lagrangian;
};

/// Box half-width from the a priori bound over the support of the first
/// measure, plus 20%.
double auto_half_width(const FlowOfProbabilities& mu, double growth_m);

ValueGrid solve_deterministic_value(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                                    const GridConfig& config);
ValueGrid solve_stochastic_value(const GeneratorSpec& spec, const FlowOfProbabilities& zeta,
                                 const GridConfig& config);

/// Nearest time node, multilinear space interpolation, linear extrapolation.
double evaluate(const ValueGrid& value, double s, const Vec& xi);

/// Feedback reading the stored maximizer at the nearest lattice node for
/// the step containing t.
ControlPolicy grid_feedback(const ValueGrid& value);

/// Feedback maximizing g dt + V(t_{i+1}, x + f dt) at the exact state, for
/// deterministic characteristics.
FeedbackFn exact_feedback(const ValueGrid& value, const GeneratorSpec& spec,
                          const FlowOfProbabilities& mu);

struct DeviationConfig {
  /// (s, xi) pairs to test; s must be nodes of the flow grid.
  std::vector<std::pair<double, Vec>> starts;
  SimulationConfig simulation;
};

struct DeviationEntry {
  std::size_t policy = 0;
  double s = 0.0;
  Vec xi;
  double value = 0.0;
  double payoff = 0.0;
  double std_err = 0.0;
  double gap = 0.0;  // payoff - value
};

struct DeviationReport {
  double max_gap = 0.0;
  double std_err_at_max = 0.0;
  double max_std_err = 0.0;
  std::vector<DeviationEntry> entries;
};

/// Simulates every policy from every start and records payoff - V(s, xi).
DeviationReport check_deviation(const ValueGrid& value, const GeneratorSpec& spec,
                                const FlowOfProbabilities& zeta,
                                const std::vector<ControlPolicy>& policies,
                                const DeviationConfig& config);

void write_value_grid(std::ostream& os, const ValueGrid& value);
ValueGrid read_value_grid(std::istream& is);

}  // namespace mfg
