#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mfg {

/// State and control spaces are at most three dimensional, so vectors live on
/// the stack with a fixed capacity.
inline constexpr int kMaxDim = 3;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                          kMaxDim, kMaxDim>;

/// Bad input: malformed configuration, violated precondition, shape mismatch.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or violated a numerical
/// stability condition.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline Vec zeros(int dim) { return Vec::Zero(dim); }

/// Shared, immutable, strictly increasing time grid starting at 0.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> nodes);

  static TimeGrid uniform(double horizon, std::size_t steps);

  std::size_t size() const { return nodes_ ? nodes_->size() : 0; }
  std::size_t steps() const { return size() == 0 ? 0 : size() - 1; }
  double operator[](std::size_t i) const { return (*nodes_)[i]; }
  double horizon() const { return nodes_->back(); }
  std::span<const double> nodes() const { return {nodes_->data(), nodes_->size()}; }
  bool empty() const { return size() == 0; }

  /// Index of the nearest node. Throws ValidationError outside [0, T].
  std::size_t nearest(double t) const;
  /// Index i with nodes[i] <= t < nodes[i+1] (clamped to the last interval).
  std::size_t interval(double t) const;

  /// Every `stride`-th node; the last node must be hit exactly.
  TimeGrid coarsen(std::size_t stride) const;
  /// Index of `t` in this grid if it is a node (within 1e-9), else npos.
  std::size_t find(double t) const;

  bool operator==(const TimeGrid& other) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::shared_ptr<const std::vector<double>> nodes_;
};

}  // namespace mfg
