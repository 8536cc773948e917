#pragma once

#include <optional>
#include <vector>

#include "mfg/common.hpp"

namespace mfg {

/// Finite weighted particle cloud on R^d standing for a measure with finite
/// second moment. Immutable; mean and second moment are cached because
/// coefficient maps query them on every evaluation.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  EmpiricalMeasure(std::vector<Vec> points, std::vector<double> weights);

  static EmpiricalMeasure uniform(std::vector<Vec> points);
  static EmpiricalMeasure dirac(const Vec& x);

  int dim() const { return dim_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<Vec>& points() const { return points_; }
  const std::vector<double>& weights() const { return weights_; }
  const Vec& point(std::size_t i) const { return points_[i]; }
  double weight(std::size_t i) const { return weights_[i]; }

  const Vec& mean() const { return mean_; }
  double second_moment() const { return second_moment_; }
  /// Square root of the second moment.
  double root_moment() const;
  bool has_uniform_weights() const { return uniform_; }

 private:
  std::vector<Vec> points_;
  std::vector<double> weights_;
  int dim_ = 0;
  Vec mean_;
  double second_moment_ = 0.0;
  bool uniform_ = false;
};

/// Node-indexed sequence of measures over a time grid.
class FlowOfProbabilities {
 public:
  FlowOfProbabilities() = default;
  FlowOfProbabilities(TimeGrid grid, std::vector<EmpiricalMeasure> measures);

  /// The same measure at every node.
  static FlowOfProbabilities constant(TimeGrid grid, const EmpiricalMeasure& m);

  const TimeGrid& time_grid() const { return grid_; }
  const std::vector<EmpiricalMeasure>& measures() const { return measures_; }
  const EmpiricalMeasure& at_node(std::size_t i) const { return measures_[i]; }
  /// Measure at the nearest node.
  const EmpiricalMeasure& at(double t) const { return measures_[grid_.nearest(t)]; }
  std::size_t size() const { return measures_.size(); }
  int dim() const { return measures_.empty() ? 0 : measures_.front().dim(); }

 private:
  TimeGrid grid_;
  std::vector<EmpiricalMeasure> measures_;
};

/// Discretized path (x(.), z(.)) on a shared grid; z is the running-payoff
/// accumulator and vanishes at the start node.
struct Trajectory {
  TimeGrid time_grid;
  std::vector<Vec> x;
  std::vector<double> z;
  std::size_t start_index = 0;

  int dim() const { return x.empty() ? 0 : static_cast<int>(x.front().size()); }
  /// Throws ValidationError if lengths disagree or z(start) != 0.
  void validate() const;
};

/// Weighted collection of trajectories on one grid: a probability on path space.
class PathMeasure {
 public:
  PathMeasure() = default;
  PathMeasure(std::vector<Trajectory> paths, std::vector<double> weights);
  static PathMeasure uniform(std::vector<Trajectory> paths);

  const std::vector<Trajectory>& paths() const { return paths_; }
  const std::vector<double>& weights() const { return weights_; }
  const TimeGrid& time_grid() const { return paths_.front().time_grid; }
  std::size_t size() const { return paths_.size(); }
  bool has_uniform_weights() const;

 private:
  std::vector<Trajectory> paths_;
  std::vector<double> weights_;
};

double second_moment(const EmpiricalMeasure& m);

enum class W2Method { exact1d, assignment, entropic };

struct W2Options {
  W2Method method = W2Method::assignment;
  /// Final entropic regularization, in squared state units.
  double epsilon = 1e-3;
  /// Largest instance solved exactly by `assignment`; larger ones fall back
  /// to the debiased entropic estimate.
  std::size_t exact_limit = 512;
  int max_sinkhorn_iterations = 2000;
  double sinkhorn_tolerance = 1e-10;
};

struct W2Result {
  double value = 0.0;
  /// Zero for exact methods; estimated absolute error for the entropic one.
  double tolerance = 0.0;
  W2Method method_used = W2Method::assignment;
};

W2Result wasserstein2(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2,
                      const W2Options& options);
double wasserstein2(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2,
                    W2Method method);
/// exact1d when d = 1, otherwise assignment (with entropic fallback).
double wasserstein2(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2);

/// sup over t of W2 between the node measures of two flows on the same grid.
double sup_w2(const FlowOfProbabilities& a, const FlowOfProbabilities& b);

/// Minimum-cost perfect matching on a square cost matrix (row-major, n x n).
/// Returns column assigned to each row.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n);

/// x-marginal of `chi` at the grid node nearest to t.
EmpiricalMeasure pushforward_at(const PathMeasure& chi, double t);
EmpiricalMeasure pushforward_at_node(const PathMeasure& chi, std::size_t node);

/// W2 on path space with the sup-norm ground cost on (x, z).
double path_w2(const PathMeasure& chi1, const PathMeasure& chi2);

/// sup over nodes and paths of ||x(t)||^2, weighted: int sup_t ||x(t)||^2 dchi.
double sup_second_moment(const PathMeasure& chi);

}  // namespace mfg
