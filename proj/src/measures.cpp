#include "mfg/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mfg {

namespace {

constexpr double kWeightSlack = 1e-12;

void check_weights(const std::vector<double>& w) {
  if (w.empty()) throw ValidationError("measure has no atoms");
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw ValidationError("measure weights must be nonnegative");
    total += x;
  }
  if (std::abs(total - 1.0) > kWeightSlack)
    throw ValidationError("measure weights must sum to 1");
}

double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double exact1d_squared(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  auto order = [](const EmpiricalMeasure& m) {
    std::vector<std::size_t> idx(m.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
      return m.point(i)(0) < m.point(j)(0);
    });
    return idx;
  };
  const auto ia = order(a);
  const auto ib = order(b);
  if (a.has_uniform_weights() && b.has_uniform_weights() && a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t k = 0; k < ia.size(); ++k) {
      double d = a.point(ia[k])(0) - b.point(ib[k])(0);
      s += d * d;
    }
    return s / static_cast<double>(ia.size());
  }
  // Walk both quantile functions; each step consumes the smaller remaining mass.
  std::size_t i = 0, j = 0;
  double ra = a.weight(ia[0]), rb = b.weight(ib[0]);
  double total = 0.0;
  while (i < ia.size() && j < ib.size()) {
    double step = std::min(ra, rb);
    double d = a.point(ia[i])(0) - b.point(ib[j])(0);
    total += step * d * d;
    ra -= step;
    rb -= step;
    if (ra <= kWeightSlack * 1e-3) {
      if (++i < ia.size()) ra = a.weight(ia[i]);
    }
    if (rb <= kWeightSlack * 1e-3) {
      if (++j < ib.size()) rb = b.weight(ib[j]);
    }
  }
  return total;
}

std::vector<double> squared_cost(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  std::vector<double> c(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      c[i * b.size() + j] = (a.point(i) - b.point(j)).squaredNorm();
  return c;
}

double assignment_squared(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  const std::size_t n = a.size();
  const auto cost = squared_cost(a, b);
  const auto match = solve_assignment(cost, n);
  // Summing the matched costs in sorted order makes W2(a, b) == W2(b, a)
  // bit for bit.
  std::vector<double> matched(n);
  for (std::size_t i = 0; i < n; ++i) matched[i] = cost[i * n + match[i]];
  std::sort(matched.begin(), matched.end());
  return std::accumulate(matched.begin(), matched.end(), 0.0) / static_cast<double>(n);
}

struct EntropicOT {
  double dual = 0.0;
  double primal = 0.0;
  double marginal_error = 0.0;
};

// Log-domain Sinkhorn with geometric epsilon annealing from max cost down to
// eps_final.
EntropicOT sinkhorn(const std::vector<double>& loga, const std::vector<double>& logb,
                    const std::vector<double>& cost, double eps_final,
                    const W2Options& opt) {
  const std::size_t n = loga.size(), m = logb.size();
  std::vector<double> f(n, 0.0), g(m, 0.0), buf(std::max(n, m));
  double cmax = *std::max_element(cost.begin(), cost.end());
  double eps = std::max(cmax, eps_final);
  auto update_f = [&](double e) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) buf[j] = logb[j] + (g[j] - cost[i * m + j]) / e;
      f[i] = -e * log_sum_exp({buf.data(), m});
    }
  };
  auto update_g = [&](double e) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) buf[i] = loga[i] + (f[i] - cost[i * m + j]) / e;
      g[j] = -e * log_sum_exp({buf.data(), n});
    }
  };
  auto marginal_err = [&](double e) {
    double err = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        s += std::exp(loga[i] + logb[j] + (f[i] + g[j] - cost[i * m + j]) / e);
      err += std::abs(s - std::exp(logb[j]));
    }
    return err;
  };
  while (true) {
    for (int it = 0; it < opt.max_sinkhorn_iterations; ++it) {
      update_f(eps);
      update_g(eps);
      if (it % 10 == 9 && marginal_err(eps) < opt.sinkhorn_tolerance) break;
    }
    if (eps <= eps_final) break;
    eps = std::max(eps * 0.5, eps_final);
  }
  EntropicOT out;
  for (std::size_t i = 0; i < n; ++i) out.dual += std::exp(loga[i]) * f[i];
  for (std::size_t j = 0; j < m; ++j) out.dual += std::exp(logb[j]) * g[j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.primal += std::exp(loga[i] + logb[j] + (f[i] + g[j] - cost[i * m + j]) / eps) *
                    cost[i * m + j];
  out.marginal_error = marginal_err(eps);
  return out;
}

W2Result entropic_w2(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                     const W2Options& opt) {
  if (!(opt.epsilon > 0.0)) throw ValidationError("entropic epsilon must be positive");
  auto logs = [](const EmpiricalMeasure& m) {
    std::vector<double> l(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) l[i] = std::log(m.weight(i));
    return l;
  };
  const auto la = logs(a), lb = logs(b);
  const auto ab = sinkhorn(la, lb, squared_cost(a, b), opt.epsilon, opt);
  const auto aa = sinkhorn(la, la, squared_cost(a, a), opt.epsilon, opt);
  const auto bb = sinkhorn(lb, lb, squared_cost(b, b), opt.epsilon, opt);
  const double divergence = std::max(0.0, ab.dual - 0.5 * aa.dual - 0.5 * bb.dual);
  W2Result r;
  r.value = std::sqrt(divergence);
  r.method_used = W2Method::entropic;
  const double cmax = [&] {
    double c = 0.0;
    for (const auto& p : a.points())
      for (const auto& q : b.points()) c = std::max(c, (p - q).squaredNorm());
    return c;
  }();
  r.tolerance = std::abs(std::sqrt(std::max(ab.primal, 0.0)) - r.value) +
                std::sqrt(opt.epsilon) * 0.5 + std::sqrt(ab.marginal_error * cmax);
  return r;
}

}  // namespace

EmpiricalMeasure::EmpiricalMeasure(std::vector<Vec> points, std::vector<double> weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.size() != weights_.size())
    throw ValidationError("measure needs one weight per point");
  check_weights(weights_);
  dim_ = static_cast<int>(points_.front().size());
  if (dim_ < 1 || dim_ > kMaxDim) throw ValidationError("measure dimension must be 1..3");
  mean_ = Vec::Zero(dim_);
  second_moment_ = 0.0;
  uniform_ = true;
  const double w_uniform = 1.0 / static_cast<double>(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].size() != dim_) throw ValidationError("measure points differ in dimension");
    mean_ += weights_[i] * points_[i];
    second_moment_ += weights_[i] * points_[i].squaredNorm();
    if (std::abs(weights_[i] - w_uniform) > 1e-15) uniform_ = false;
  }
  if (!std::isfinite(second_moment_)) throw NumericalError("measure has non-finite moment");
}

EmpiricalMeasure EmpiricalMeasure::uniform(std::vector<Vec> points) {
  if (points.empty()) throw ValidationError("measure has no atoms");
  const double w = 1.0 / static_cast<double>(points.size());
  std::vector<double> weights(points.size(), w);
  // Put the rounding residue on the first atom so the sum is 1 to the ulp.
  double total = 0.0;
  for (double x : weights) total += x;
  weights[0] += 1.0 - total;
  EmpiricalMeasure m(std::move(points), std::move(weights));
  m.uniform_ = true;
  return m;
}

EmpiricalMeasure EmpiricalMeasure::dirac(const Vec& x) { return uniform({x}); }

double EmpiricalMeasure::root_moment() const { return std::sqrt(second_moment_); }

double second_moment(const EmpiricalMeasure& m) { return m.second_moment(); }

FlowOfProbabilities::FlowOfProbabilities(TimeGrid grid, std::vector<EmpiricalMeasure> measures)
    : grid_(std::move(grid)), measures_(std::move(measures)) {
  if (grid_.size() != measures_.size())
    throw ValidationError("flow needs one measure per grid node");
  for (const auto& m : measures_)
    if (m.dim() != measures_.front().dim()) throw ValidationError("flow measures differ in dimension");
}

FlowOfProbabilities FlowOfProbabilities::constant(TimeGrid grid, const EmpiricalMeasure& m) {
  std::vector<EmpiricalMeasure> ms(grid.size(), m);
  return FlowOfProbabilities(std::move(grid), std::move(ms));
}

void Trajectory::validate() const {
  if (x.size() != time_grid.size() || z.size() != time_grid.size())
    throw ValidationError("trajectory length does not match its grid");
  if (start_index >= time_grid.size()) throw ValidationError("trajectory start outside grid");
  if (z[start_index] != 0.0) throw ValidationError("payoff accumulator must vanish at start");
}

PathMeasure::PathMeasure(std::vector<Trajectory> paths, std::vector<double> weights)
    : paths_(std::move(paths)), weights_(std::move(weights)) {
  if (paths_.size() != weights_.size()) throw ValidationError("path measure needs one weight per path");
  check_weights(weights_);
  for (const auto& p : paths_) {
    if (!(p.time_grid == paths_.front().time_grid))
      throw ValidationError("path measure trajectories must share one grid");
    if (p.x.size() != p.time_grid.size()) throw ValidationError("trajectory length mismatch");
  }
}

PathMeasure PathMeasure::uniform(std::vector<Trajectory> paths) {
  if (paths.empty()) throw ValidationError("path measure has no paths");
  std::vector<double> w(paths.size(), 1.0 / static_cast<double>(paths.size()));
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  w[0] += 1.0 - total;
  return PathMeasure(std::move(paths), std::move(w));
}

bool PathMeasure::has_uniform_weights() const {
  const double w = 1.0 / static_cast<double>(weights_.size());
  for (double x : weights_)
    if (std::abs(x - w) > 1e-12) return false;
  return true;
}

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) throw ValidationError("assignment cost matrix must be n x n");
  // Shortest augmenting path with row/column potentials, 1-based internally.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row(n);
  for (std::size_t j = 1; j <= n; ++j) row[p[j] - 1] = j - 1;
  return row;
}

W2Result wasserstein2(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2,
                      const W2Options& options) {
  if (m1.dim() != m2.dim()) throw ValidationError("W2: measures differ in dimension");
  W2Result r;
  r.method_used = options.method;
  switch (options.method) {
    case W2Method::exact1d:
      if (m1.dim() != 1) throw ValidationError("W2 exact1d requires d = 1");
      r.value = std::sqrt(std::max(0.0, exact1d_squared(m1, m2)));
      return r;
    case W2Method::assignment:
      if (m1.size() != m2.size() || !m1.has_uniform_weights() || !m2.has_uniform_weights())
        throw ValidationError("W2 assignment requires equal counts and uniform weights");
      if (m1.size() > options.exact_limit) return entropic_w2(m1, m2, options);
      r.value = std::sqrt(std::max(0.0, assignment_squared(m1, m2)));
      return r;
    case W2Method::entropic:
      return entropic_w2(m1, m2, options);
  }
  return r;
}

double wasserstein2(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2, W2Method method) {
  W2Options o;
  o.method = method;
  return wasserstein2(m1, m2, o).value;
}

double wasserstein2(const EmpiricalMeasure& m1, const EmpiricalMeasure& m2) {
  if (m1.dim() != m2.dim()) throw ValidationError("W2: measures differ in dimension");
  if (m1.dim() == 1) return wasserstein2(m1, m2, W2Method::exact1d);
  if (m1.size() == m2.size() && m1.has_uniform_weights() && m2.has_uniform_weights())
    return wasserstein2(m1, m2, W2Method::assignment);
  return wasserstein2(m1, m2, W2Method::entropic);
}

double sup_w2(const FlowOfProbabilities& a, const FlowOfProbabilities& b) {
  if (!(a.time_grid() == b.time_grid())) throw ValidationError("sup_w2: flows on different grids");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, wasserstein2(a.at_node(i), b.at_node(i)));
  return s;
}

EmpiricalMeasure pushforward_at_node(const PathMeasure& chi, std::size_t node) {
  std::vector<Vec> pts;
  pts.reserve(chi.size());
  for (const auto& p : chi.paths()) pts.push_back(p.x[node]);
  return EmpiricalMeasure(std::move(pts), chi.weights());
}

EmpiricalMeasure pushforward_at(const PathMeasure& chi, double t) {
  return pushforward_at_node(chi, chi.time_grid().nearest(t));
}

double path_w2(const PathMeasure& chi1, const PathMeasure& chi2) {
  if (chi1.size() != chi2.size() || !chi1.has_uniform_weights() || !chi2.has_uniform_weights())
    throw ValidationError("path_w2 requires equal counts and uniform weights");
  if (!(chi1.time_grid() == chi2.time_grid())) throw ValidationError("path_w2: grids differ");
  const std::size_t n = chi1.size();
  const std::size_t nodes = chi1.time_grid().size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = chi1.paths()[i];
    for (std::size_t j = 0; j < n; ++j) {
      const auto& b = chi2.paths()[j];
      double sup = 0.0;
      for (std::size_t k = 0; k < nodes; ++k) {
        const double dz = a.z[k] - b.z[k];
        sup = std::max(sup, (a.x[k] - b.x[k]).squaredNorm() + dz * dz);
      }
      cost[i * n + j] = sup;
    }
  }
  const auto match = solve_assignment(cost, n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost[i * n + match[i]];
  return std::sqrt(s / static_cast<double>(n));
}

double sup_second_moment(const PathMeasure& chi) {
  double s = 0.0;
  for (std::size_t i = 0; i < chi.size(); ++i) {
    double sup = 0.0;
    for (const auto& x : chi.paths()[i].x) sup = std::max(sup, x.squaredNorm());
    s += chi.weights()[i] * sup;
  }
  return s;
}

}  // namespace mfg
