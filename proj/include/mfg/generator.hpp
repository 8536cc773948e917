#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "mfg/common.hpp"
#include "mfg/measures.hpp"

namespace mfg {

/// Finite discretization of the control space; enumeration order defines
/// tie-breaking everywhere.
class ControlSet {
 public:
  ControlSet() = default;
  explicit ControlSet(std::vector<Vec> points);

  /// Tensor grid with `counts[k]` evenly spaced points on [lower_k, upper_k].
  static ControlSet grid(const Vec& lower, const Vec& upper, const std::vector<int>& counts);

  std::size_t size() const { return points_.size(); }
  const Vec& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<Vec>& points() const { return points_; }
  int dim() const { return static_cast<int>(points_.front().size()); }
  /// Index of the point with the smallest norm (lowest index on ties).
  std::size_t smallest() const;

 private:
  std::vector<Vec> points_;
};

/// One atom of a finite-activity jump measure: rate lambda (per unit time)
/// at displacement y.
struct JumpAtom {
  double rate = 0.0;
  Vec displacement;
};

using DriftFn = std::function<Vec(double t, const Vec& x, const EmpiricalMeasure& m, const Vec& u)>;
using DiffusionFn = std::function<Mat(double t, const Vec& x, const EmpiricalMeasure& m, const Vec& u)>;
using JumpFn = std::function<JumpAtom(double t, const Vec& x, const EmpiricalMeasure& m, const Vec& u)>;
using RunningPayoffFn =
    std::function<double(double t, const Vec& x, const EmpiricalMeasure& m, const Vec& u)>;
using TerminalPayoffFn = std::function<double(const Vec& x, const EmpiricalMeasure& m)>;

/// Levy-Khintchine generator data plus the payoffs of the game. An empty
/// diffusion map and empty jump list make it the deterministic generator
/// (drift only).
struct GeneratorSpec {
  int dim = 1;
  ControlSet controls;
  DriftFn drift;
  DiffusionFn diffusion;
  std::vector<JumpFn> jumps;
  RunningPayoffFn running_payoff;
  TerminalPayoffFn terminal_payoff;

  bool is_deterministic() const { return !diffusion && jumps.empty(); }
  /// Same drift and payoffs with diffusion and jumps removed.
  GeneratorSpec deterministic_part() const;

  Mat diffusion_at(double t, const Vec& x, const EmpiricalMeasure& m, const Vec& u) const;
  /// Throws ValidationError when a required map is missing.
  void validate() const;
};

/// (t, x, m, u) at which coefficients are evaluated.
struct EvalPoint {
  double t = 0.0;
  Vec x;
  EmpiricalMeasure m;
  Vec u;
};

/// Sum of diagonal diffusion entries plus int ||y||^2 nu(dy).
double total_noise(const GeneratorSpec& spec, double t, const Vec& x, const EmpiricalMeasure& m,
                   const Vec& u);
/// Drift plus the mean of jumps leaving the unit ball.
Vec effective_drift(const GeneratorSpec& spec, double t, const Vec& x, const EmpiricalMeasure& m,
                    const Vec& u);
/// Drift actually applied between jumps: f minus the compensator of the
/// jumps inside the closed unit ball.
Vec compensated_drift(const GeneratorSpec& spec, double t, const Vec& x,
                      const EmpiricalMeasure& m, const Vec& u);

/// Test functions on which the generator acts in closed form. The coupling
/// kinds carry the frozen extra arguments; the generator acts on x only.
struct LinearTest {
  Vec xi;  // phi(x) = <xi, x>
};
struct ShiftedQuadraticTest {
  Vec xi;  // phi(x) = ||x - xi||^2
};
struct CouplingQuadraticTest {
  Vec x2;  // phi(x) = ||x - x2||^2
};
struct CouplingLinearTest {
  Vec x2, x3;  // phi(x) = <x - x2, x3>
};
using TestFunction =
    std::variant<LinearTest, ShiftedQuadraticTest, CouplingQuadraticTest, CouplingLinearTest>;

double evaluate_test(const TestFunction& phi, const Vec& x);

/// L phi(x) from the Levy-Khintchine form: 1/2 tr(G Hess phi) + <f, grad phi>
/// + sum_j lambda_j [phi(x + y_j) - phi(x) - <y_j, grad phi> 1{|y_j| <= 1}].
double apply_generator(const GeneratorSpec& spec, const TestFunction& phi, double t, const Vec& x,
                       const EmpiricalMeasure& m, const Vec& u);

/// Square-root factor S with S S^T = G; throws NumericalError if G is not
/// symmetric positive semidefinite.
Mat diffusion_factor(const Mat& g);

/// Per-member normalized distance to the limit: max over the sample of the
/// noise ratio and the squared drift ratio, clamped to 1.
std::vector<double> epsilon_estimate(const std::vector<GeneratorSpec>& family,
                                     const GeneratorSpec& limit,
                                     const std::vector<EvalPoint>& sample);

struct GrowthAudit {
  bool passed = true;
  double declared_m = 0.0;
  double worst_drift_ratio = 0.0;  // ||b|| / (1 + ||x|| + sqrt(moment))
  double worst_noise_ratio = 0.0;  // Sigma / (1 + ||x||^2 + moment)
  std::size_t sample_size = 0;
  std::string message;
};

/// Sampled check of ||b|| <= M(1+||x||+s(m)) and Sigma <= M(1+||x||^2+s^2(m)),
/// plus symmetry and positive semidefiniteness of G on the sample.
GrowthAudit audit_growth(const GeneratorSpec& spec, double declared_m,
                         const std::vector<EvalPoint>& sample);

/// Grid of sample points over [-half_width, half_width]^d (per-axis count),
/// crossed with the given measures, times and every control.
std::vector<EvalPoint> make_sample(const GeneratorSpec& spec, double half_width,
                                   int points_per_axis, const std::vector<EmpiricalMeasure>& measures,
                                   const std::vector<double>& times);

}  // namespace mfg
