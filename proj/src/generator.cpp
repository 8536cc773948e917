#include "mfg/generator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfg {

ControlSet::ControlSet(std::vector<Vec> points) : points_(std::move(points)) {
  if (points_.empty()) throw ValidationError("control set is empty");
  const auto k = points_.front().size();
  if (k < 1 || k > kMaxDim) throw ValidationError("control dimension must be 1..3");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].size() != k) throw ValidationError("controls differ in dimension");
    for (std::size_t j = 0; j < i; ++j)
      if (points_[i] == points_[j]) throw ValidationError("duplicate control point");
  }
}

ControlSet ControlSet::grid(const Vec& lower, const Vec& upper, const std::vector<int>& counts) {
  const auto k = lower.size();
  if (upper.size() != k || static_cast<Eigen::Index>(counts.size()) != k)
    throw ValidationError("control grid bounds and counts differ in dimension");
  std::vector<Vec> pts;
  std::vector<int> idx(counts.size(), 0);
  for (int c : counts)
    if (c < 1) throw ValidationError("control grid needs at least one point per axis");
  while (true) {
    Vec p(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      const int c = counts[static_cast<std::size_t>(a)];
      p(a) = c == 1 ? lower(a)
                    : lower(a) + (upper(a) - lower(a)) * idx[static_cast<std::size_t>(a)] / (c - 1);
    }
    pts.push_back(p);
    std::size_t a = 0;
    while (a < idx.size() && ++idx[a] == counts[a]) idx[a++] = 0;
    if (a == idx.size()) break;
  }
  return ControlSet(std::move(pts));
}

std::size_t ControlSet::smallest() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < points_.size(); ++i)
    if (points_[i].norm() < points_[best].norm()) best = i;
  return best;
}

GeneratorSpec GeneratorSpec::deterministic_part() const {
  GeneratorSpec out = *this;
  out.diffusion = nullptr;
  out.jumps.clear();
  return out;
}

Mat GeneratorSpec::diffusion_at(double t, const Vec& x, const EmpiricalMeasure& m,
                                const Vec& u) const {
  if (!diffusion) return Mat::Zero(dim, dim);
  return diffusion(t, x, m, u);
}

void GeneratorSpec::validate() const {
  if (dim < 1 || dim > kMaxDim) throw ValidationError("state dimension must be 1..3");
  if (controls.size() == 0) throw ValidationError("generator has no controls");
  if (!drift) throw ValidationError("generator has no drift map");
  if (!running_payoff) throw ValidationError("generator has no running payoff");
  if (!terminal_payoff) throw ValidationError("generator has no terminal payoff");
}

double total_noise(const GeneratorSpec& spec, double t, const Vec& x, const EmpiricalMeasure& m,
                   const Vec& u) {
  double s = spec.diffusion ? spec.diffusion(t, x, m, u).trace() : 0.0;
  for (const auto& jump : spec.jumps) {
    const JumpAtom a = jump(t, x, m, u);
    s += a.rate * a.displacement.squaredNorm();
  }
  return s;
}

Vec effective_drift(const GeneratorSpec& spec, double t, const Vec& x, const EmpiricalMeasure& m,
                    const Vec& u) {
  Vec b = spec.drift(t, x, m, u);
  for (const auto& jump : spec.jumps) {
    const JumpAtom a = jump(t, x, m, u);
    if (a.displacement.norm() > 1.0) b += a.rate * a.displacement;
  }
  return b;
}

Vec compensated_drift(const GeneratorSpec& spec, double t, const Vec& x,
                      const EmpiricalMeasure& m, const Vec& u) {
  Vec b = spec.drift(t, x, m, u);
  for (const auto& jump : spec.jumps) {
    const JumpAtom a = jump(t, x, m, u);
    if (a.displacement.norm() <= 1.0) b -= a.rate * a.displacement;
  }
  return b;
}

double evaluate_test(const TestFunction& phi, const Vec& x) {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearTest>) return f.xi.dot(x);
        if constexpr (std::is_same_v<T, ShiftedQuadraticTest>) return (x - f.xi).squaredNorm();
        if constexpr (std::is_same_v<T, CouplingQuadraticTest>) return (x - f.x2).squaredNorm();
        if constexpr (std::is_same_v<T, CouplingLinearTest>) return (x - f.x2).dot(f.x3);
      },
      phi);
}

namespace {

struct Derivatives {
  Vec gradient;
  double hessian_scale = 0.0;  // Hessian = scale * Identity for this family
};

Derivatives derivatives(const TestFunction& phi, const Vec& x) {
  return std::visit(
      [&](const auto& f) -> Derivatives {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LinearTest>) return {f.xi, 0.0};
        if constexpr (std::is_same_v<T, ShiftedQuadraticTest>) return {2.0 * (x - f.xi), 2.0};
        if constexpr (std::is_same_v<T, CouplingQuadraticTest>) return {2.0 * (x - f.x2), 2.0};
        if constexpr (std::is_same_v<T, CouplingLinearTest>) return {f.x3, 0.0};
      },
      phi);
}

}  // namespace

double apply_generator(const GeneratorSpec& spec, const TestFunction& phi, double t, const Vec& x,
                       const EmpiricalMeasure& m, const Vec& u) {
  const Derivatives d = derivatives(phi, x);
  if (d.gradient.size() != x.size()) throw ValidationError("test function dimension mismatch");
  double out = spec.drift(t, x, m, u).dot(d.gradient);
  if (spec.diffusion) out += 0.5 * d.hessian_scale * spec.diffusion(t, x, m, u).trace();
  const double phi_x = evaluate_test(phi, x);
  for (const auto& jump : spec.jumps) {
    const JumpAtom a = jump(t, x, m, u);
    double inc = evaluate_test(phi, x + a.displacement) - phi_x;
    if (a.displacement.norm() <= 1.0) inc -= a.displacement.dot(d.gradient);
    out += a.rate * inc;
  }
  return out;
}

std::vector<double> epsilon_estimate(const std::vector<GeneratorSpec>& family,
                                     const GeneratorSpec& limit,
                                     const std::vector<EvalPoint>& sample) {
  if (sample.empty()) throw ValidationError("epsilon_estimate needs a nonempty sample");
  std::vector<double> eps;
  eps.reserve(family.size());
  for (const auto& spec : family) {
    double e = 0.0;
    for (const auto& p : sample) {
      const double moment = p.m.second_moment();
      const double xn = p.x.norm();
      const double noise = total_noise(spec, p.t, p.x, p.m, p.u) / (1.0 + xn * xn + moment);
      const Vec gap = effective_drift(spec, p.t, p.x, p.m, p.u) - limit.drift(p.t, p.x, p.m, p.u);
      const double drift = gap.norm() / (1.0 + xn + std::sqrt(moment));
      e = std::max({e, noise, drift * drift});
    }
    eps.push_back(std::min(e, 1.0));
  }
  return eps;
}

GrowthAudit audit_growth(const GeneratorSpec& spec, double declared_m,
                         const std::vector<EvalPoint>& sample) {
  GrowthAudit a;
  a.declared_m = declared_m;
  a.sample_size = sample.size();
  for (const auto& p : sample) {
    const double moment = p.m.second_moment();
    const double xn = p.x.norm();
    const double b = effective_drift(spec, p.t, p.x, p.m, p.u).norm() /
                     (1.0 + xn + std::sqrt(moment));
    const double s = std::abs(total_noise(spec, p.t, p.x, p.m, p.u)) / (1.0 + xn * xn + moment);
    a.worst_drift_ratio = std::max(a.worst_drift_ratio, b);
    a.worst_noise_ratio = std::max(a.worst_noise_ratio, s);
    if (spec.diffusion) {
      const Mat g = spec.diffusion(p.t, p.x, p.m, p.u);
      const double scale = std::max(1.0, g.norm());
      if ((g - g.transpose()).norm() > 1e-12 * scale) {
        a.passed = false;
        a.message = "diffusion matrix is not symmetric";
      } else if (Eigen::SelfAdjointEigenSolver<Mat>(g).eigenvalues().minCoeff() < -1e-12 * scale) {
        a.passed = false;
        a.message = "diffusion matrix is not positive semidefinite";
      }
    }
  }
  if (a.worst_drift_ratio > declared_m || a.worst_noise_ratio > declared_m) {
    a.passed = false;
    std::ostringstream os;
    os << "growth constant M=" << declared_m << " exceeded (drift ratio " << a.worst_drift_ratio
       << ", noise ratio " << a.worst_noise_ratio << ")";
    a.message = os.str();
  }
  return a;
}

std::vector<EvalPoint> make_sample(const GeneratorSpec& spec, double half_width,
                                   int points_per_axis, const std::vector<EmpiricalMeasure>& measures,
                                   const std::vector<double>& times) {
  std::vector<EvalPoint> out;
  const int d = spec.dim;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  const int c = std::max(points_per_axis, 1);
  while (true) {
    Vec x(d);
    for (int a = 0; a < d; ++a)
      x(a) = c == 1 ? 0.0 : -half_width + 2.0 * half_width * idx[static_cast<std::size_t>(a)] / (c - 1);
    for (const auto& m : measures)
      for (double t : times)
        for (const auto& u : spec.controls.points()) out.push_back({t, x, m, u});
    std::size_t a = 0;
    while (a < idx.size() && ++idx[a] == c) idx[a++] = 0;
    if (a == idx.size()) break;
  }
  return out;
}

Mat diffusion_factor(const Mat& g) {
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  if (g.rows() == 1) {
    if (g(0, 0) < -1e-12 * scale) throw NumericalError("diffusion matrix is not PSD");
    return Mat::Constant(1, 1, std::sqrt(std::max(g(0, 0), 0.0)));
  }
  if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw NumericalError("diffusion matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(g);
  Vec ev = es.eigenvalues();
  if (ev.minCoeff() < -1e-12 * scale) throw NumericalError("diffusion matrix is not PSD");
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}


}  // namespace mfg
