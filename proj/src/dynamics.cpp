#include "mfg/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfg/random.hpp"

namespace mfg {

PiecewiseControl PiecewiseControl::constant(const TimeGrid& grid, std::size_t control) {
  return {grid, std::vector<std::size_t>(grid.steps(), control)};
}

void PiecewiseControl::validate(const ControlSet& controls) const {
  if (values.size() != time_grid.steps())
    throw ValidationError("piecewise control needs one value per interval");
  for (auto v : values)
    if (v >= controls.size()) throw ValidationError("piecewise control outside the control set");
}

double hamiltonian(const GeneratorSpec& spec, double t, const Vec& x, const EmpiricalMeasure& m,
                   const Vec& p) {
  const auto& u = spec.controls[argmax_control(spec, t, x, m, p)];
  return p.dot(spec.drift(t, x, m, u)) + spec.running_payoff(t, x, m, u);
}

std::size_t argmax_control(const GeneratorSpec& spec, double t, const Vec& x,
                           const EmpiricalMeasure& m, const Vec& p) {
  std::size_t best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < spec.controls.size(); ++k) {
    const auto& u = spec.controls[k];
    const double v = p.dot(spec.drift(t, x, m, u)) + spec.running_payoff(t, x, m, u);
    if (v > best_val) {
      best_val = v;
      best = k;
    }
  }
  return best;
}

namespace {

Vec rk4_step(const GeneratorSpec& spec, double t, double dt, const Vec& x,
             const EmpiricalMeasure& m, const Vec& u) {
  const Vec k1 = spec.drift(t, x, m, u);
  const Vec k2 = spec.drift(t + 0.5 * dt, x + 0.5 * dt * k1, m, u);
  const Vec k3 = spec.drift(t + 0.5 * dt, x + 0.5 * dt * k2, m, u);
  const Vec k4 = spec.drift(t + dt, x + dt * k3, m, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void check_finite(const Vec& x, double z) {
  if (!x.allFinite() || !std::isfinite(z))
    throw NumericalError("characteristic produced a non-finite value");
}

template <typename ControlAt>
Trajectory integrate(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                     std::size_t start, const Vec& xi, ControlAt&& control_at) {
  if (xi.size() != spec.dim) throw ValidationError("initial state has the wrong dimension");
  const TimeGrid& grid = mu.time_grid();
  Trajectory tr;
  tr.time_grid = grid;
  tr.start_index = start;
  tr.x.assign(grid.size(), xi);
  tr.z.assign(grid.size(), 0.0);
  for (std::size_t i = start; i + 1 < grid.size(); ++i) {
    const double t = grid[i], dt = grid[i + 1] - grid[i];
    const auto& m = mu.at_node(i);
    const Vec& u = spec.controls[control_at(i, tr.x[i])];
    tr.x[i + 1] = rk4_step(spec, t, dt, tr.x[i], m, u);
    tr.z[i + 1] = tr.z[i] + 0.5 * dt *
                                (spec.running_payoff(t, tr.x[i], m, u) +
                                 spec.running_payoff(grid[i + 1], tr.x[i + 1], m, u));
    check_finite(tr.x[i + 1], tr.z[i + 1]);
  }
  return tr;
}

}  // namespace

Trajectory integrate_characteristic(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                                    double s, const Vec& xi, const PiecewiseControl& v) {
  const std::size_t start = mu.time_grid().find(s);
  if (start == TimeGrid::npos) throw ValidationError("start time is not a grid node");
  if (!(v.time_grid == mu.time_grid())) throw ValidationError("control and flow grids differ");
  v.validate(spec.controls);
  return integrate(spec, mu, start, xi, [&](std::size_t i, const Vec&) { return v.values[i]; });
}

Trajectory integrate_feedback(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                              std::size_t start_node, const Vec& xi, const FeedbackFn& feedback,
                              std::vector<std::size_t>* controls_out) {
  if (controls_out) controls_out->assign(mu.time_grid().steps(), 0);
  return integrate(spec, mu, start_node, xi, [&](std::size_t i, const Vec& x) {
    const std::size_t k = feedback(i, x);
    if (k >= spec.controls.size()) throw ValidationError("feedback returned an unknown control");
    if (controls_out) (*controls_out)[i] = k;
    return k;
  });
}

std::vector<Trajectory> reachable_cloud(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                                        double s, const Vec& xi, std::size_t n_controls,
                                        std::uint64_t seed) {
  if (n_controls < 1) throw ValidationError("reachable_cloud needs at least one control");
  const TimeGrid& grid = mu.time_grid();
  const std::size_t start = grid.find(s);
  if (start == TimeGrid::npos) throw ValidationError("start time is not a grid node");
  const std::size_t n_u = spec.controls.size();
  const std::size_t steps = grid.steps();
  std::vector<Trajectory> out;
  out.reserve(n_controls);
  for (std::size_t k = 0; k < n_controls; ++k) {
    PiecewiseControl v;
    if (k < n_u) {
      v = PiecewiseControl::constant(grid, k);
    } else {
      CounterRng rng(seed, k);
      const std::size_t active = std::max<std::size_t>(steps - start, 1);
      const std::size_t period = 1 + static_cast<std::size_t>(rng.uniform() * active);
      v.time_grid = grid;
      v.values.assign(steps, 0);
      std::size_t current = 0;
      for (std::size_t i = start; i < steps; ++i) {
        if ((i - start) % period == 0) current = static_cast<std::size_t>(rng.uniform() * n_u) % n_u;
        v.values[i] = current;
      }
    }
    out.push_back(integrate_characteristic(spec, mu, s, xi, v));
  }
  return out;
}

double apriori_bound(double xi_norm, double growth_m, double horizon, double sup_root_moment) {
  const double mt = growth_m * horizon;
  return (xi_norm + mt + mt * sup_root_moment) * std::exp(mt);
}

double sup_root_moment(const FlowOfProbabilities& mu) {
  double s = 0.0;
  for (const auto& m : mu.measures()) s = std::max(s, m.root_moment());
  return s;
}

}  // namespace mfg
