#include "mfg/value.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <string>

#include "mfg/dynamics.hpp"
#include "mfg/parallel.hpp"

namespace mfg {

namespace {
constexpr std::size_t kMaxLatticeNodes = 50'000'000;
constexpr double kStabilityLimit = 0.45;
}  // namespace

SpaceLattice::SpaceLattice(int dim, double half_width, double h) : dim_(dim), h_(h) {
  if (dim < 1 || dim > kMaxDim) throw ValidationError("lattice dimension must be 1..3");
  if (!(h > 0.0) || !(half_width > 0.0))
    throw ValidationError("lattice needs positive spacing and half-width");
  const auto cells = static_cast<std::size_t>(std::ceil(half_width / h - 1e-9));
  half_width_ = static_cast<double>(cells) * h;
  per_axis_ = 2 * cells + 1;
  size_ = 1;
  for (int a = 0; a < dim; ++a) {
    stride_[a] = size_;
    if (size_ > kMaxLatticeNodes / per_axis_) throw ValidationError("lattice is too large");
    size_ *= per_axis_;
  }
}

Vec SpaceLattice::node(std::size_t index) const {
  Vec x(dim_);
  for (int a = 0; a < dim_; ++a) {
    const std::size_t i = (index / stride_[a]) % per_axis_;
    x(a) = -half_width_ + h_ * static_cast<double>(i);
  }
  return x;
}

std::size_t SpaceLattice::nearest(const Vec& x) const {
  std::size_t index = 0;
  const auto top = static_cast<double>(per_axis_ - 1);
  for (int a = 0; a < dim_; ++a) {
    const double s = std::clamp(std::round((x(a) + half_width_) / h_), 0.0, top);
    index += static_cast<std::size_t>(s) * stride_[a];
  }
  return index;
}

double SpaceLattice::interpolate(std::span<const double> values, const Vec& x) const {
  std::size_t base = 0;
  double frac[kMaxDim];
  for (int a = 0; a < dim_; ++a) {
    const double s = (x(a) + half_width_) / h_;
    const double cell =
        std::clamp(std::floor(s), 0.0, static_cast<double>(per_axis_ - 2));
    frac[a] = s - cell;  // outside [0, 1] extrapolates the boundary cell
    base += static_cast<std::size_t>(cell) * stride_[a];
  }
  double out = 0.0;
  for (unsigned corner = 0; corner < (1u << dim_); ++corner) {
    double w = 1.0;
    std::size_t index = base;
    for (int a = 0; a < dim_; ++a) {
      if (corner & (1u << a)) {
        w *= frac[a];
        index += stride_[a];
      } else {
        w *= 1.0 - frac[a];
      }
    }
    out += w * values[index];
  }
  return out;
}

double SpaceLattice::excursion(const Vec& x) const {
  double e = 0.0;
  for (int a = 0; a < dim_; ++a) e = std::max(e, std::abs(x(a)) - half_width_);
  return e;
}

ValueGrid::ValueGrid(TimeGrid time, SpaceLattice lattice)
    : time_(std::move(time)), lattice_(lattice), values_(time_.size() * lattice_.size(), 0.0) {}

double auto_half_width(const FlowOfProbabilities& mu, double growth_m) {
  double support = 0.0;
  for (const Vec& p : mu.at_node(0).points()) support = std::max(support, p.norm());
  const double bound =
      apriori_bound(support, growth_m, mu.time_grid().horizon(), sup_root_moment(mu));
  return 1.2 * bound;
}

namespace {

SpaceLattice make_lattice(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                          const GridConfig& config) {
  if (mu.dim() != spec.dim) throw ValidationError("flow dimension differs from the spec");
  const double L = config.half_width > 0.0 ? config.half_width
                                           : auto_half_width(mu, config.growth_m);
  return SpaceLattice(spec.dim, L, config.h);
}

void set_terminal(ValueGrid& v, const GeneratorSpec& spec, const FlowOfProbabilities& mu) {
  const std::size_t last = v.time_grid().size() - 1;
  const EmpiricalMeasure& m = mu.at_node(last);
  auto out = v.slice(last);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = spec.terminal_payoff(v.lattice().node(j), m);
}


/// Backward sweep shared by all schemes. `candidate(lattice, t, dt, m, x, u,
/// next, excursion)` returns the one-step value of control u at node x and
/// raises `excursion` to the furthest point it read outside the box.
template <typename Candidate>
ValueGrid sweep(const GeneratorSpec& spec, const FlowOfProbabilities& mu, const GridConfig& config,
                Candidate&& candidate) {
  spec.validate();
  if (spec.controls.size() > 65535) throw ValidationError("too many controls for the policy table");
  ValueGrid v(mu.time_grid(), make_lattice(spec, mu, config));
  const SpaceLattice& lat = v.lattice();
  const std::size_t steps = v.time_grid().steps();
  v.policy().assign(steps * lat.size(), 0);
  set_terminal(v, spec, mu);

  std::vector<double> excursion(lat.size(), 0.0);
  const double margin = config.extrapolation_margin * lat.half_width();
  for (std::size_t i = steps; i-- > 0;) {
    const double t = v.time_grid()[i];
    const double dt = v.time_grid()[i + 1] - t;
    const EmpiricalMeasure& m = mu.at_node(i);
    std::span<const double> next = v.slice(i + 1);
    std::span<double> cur = v.slice(i);
    std::uint16_t* pol = v.policy().data() + i * lat.size();
    parallel_for(lat.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t j = begin; j < end; ++j) {
        const Vec x = lat.node(j);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        double exc = 0.0;
        for (std::size_t u = 0; u < spec.controls.size(); ++u) {
          const double val = candidate(lat, t, dt, m, x, spec.controls[u], next, exc);
          if (val > best) {
            best = val;
            arg = u;
          }
        }
        if (!std::isfinite(best)) throw NumericalError("value iteration produced a non-finite value");
        cur[j] = best;
        pol[j] = static_cast<std::uint16_t>(arg);
        excursion[j] = exc;
      }
    });
    for (double e : excursion) {
      v.diagnostics.max_excursion = std::max(v.diagnostics.max_excursion, e);
      if (e > margin) ++v.diagnostics.feet_outside_margin;
    }
  }
  return v;
}

/// Reads V at z and records how far outside the box z lies.
double read(const SpaceLattice& lat, std::span<const double> next, const Vec& z, double& exc) {
  exc = std::max(exc, lat.excursion(z));
  return lat.interpolate(next, z);
}

}  // namespace

ValueGrid solve_deterministic_value(const GeneratorSpec& spec, const FlowOfProbabilities& mu,
                                    const GridConfig& config) {
  const GeneratorSpec det = spec.deterministic_part();
  return sweep(det, mu, config,
               [&det](const SpaceLattice& lat, double t, double dt, const EmpiricalMeasure& m,
                      const Vec& x, const Vec& u, std::span<const double> next, double& exc) {
                 const Vec foot = x + dt * det.drift(t, x, m, u);
                 return det.running_payoff(t, x, m, u) * dt + read(lat, next, foot, exc);
               });
}

namespace {

std::vector<JumpAtom> jump_atoms(const GeneratorSpec& spec, double t, const Vec& x,
                                 const EmpiricalMeasure& m, const Vec& u, double& total_rate) {
  std::vector<JumpAtom> atoms;
  atoms.reserve(spec.jumps.size());
  total_rate = 0.0;
  for (const auto& jf : spec.jumps) {
    JumpAtom a = jf(t, x, m, u);
    if (!(a.rate >= 0.0)) throw NumericalError("negative jump rate");
    total_rate += a.rate;
    atoms.push_back(std::move(a));
  }
  return atoms;
}

double semi_lagrangian_step(const GeneratorSpec& spec, const SpaceLattice& lat, double t, double dt,
                            const EmpiricalMeasure& m, const Vec& x, const Vec& u,
                            std::span<const double> next, double& exc) {
  const int d = spec.dim;
  const Vec foot = x + dt * compensated_drift(spec, t, x, m, u);
  Mat spread;
  if (spec.diffusion)
    spread = diffusion_factor(spec.diffusion_at(t, x, m, u)) * std::sqrt(d * dt);
  // Average over the 2d points z +- spread_k; the discrete law has mean z and
  // covariance G dt.
  auto expect = [&](const Vec& z) {
    if (!spec.diffusion) return read(lat, next, z, exc);
    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
      acc += read(lat, next, z + spread.col(k), exc);
      acc += read(lat, next, z - spread.col(k), exc);
    }
    return acc / (2.0 * d);
  };
  double total_rate = 0.0;
  const auto atoms = jump_atoms(spec, t, x, m, u, total_rate);
  if (total_rate * dt > 1.0)
    throw NumericalError("jump intensity times dt exceeds 1; refine the time grid");
  double jumped = 0.0;
  for (const auto& a : atoms) jumped += a.rate * expect(foot + a.displacement);
  return spec.running_payoff(t, x, m, u) * dt + (1.0 - total_rate * dt) * expect(foot) +
         dt * jumped;
}

double central_explicit_step(const GeneratorSpec& spec, const SpaceLattice& lat, double t,
                             double dt, const EmpiricalMeasure& m, const Vec& x, const Vec& u,
                             std::span<const double> next, double& exc) {
  const int d = spec.dim;
  const double h = lat.spacing();
  const Vec b = compensated_drift(spec, t, x, m, u);
  const Mat g = spec.diffusion ? spec.diffusion_at(t, x, m, u) : Mat::Zero(d, d).eval();
  double total_rate = 0.0;
  const auto atoms = jump_atoms(spec, t, x, m, u, total_rate);

  const double rate = g.diagonal().sum() / (h * h) + b.cwiseAbs().sum() / h + total_rate;
  if (rate * dt > kStabilityLimit) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "explicit scheme unstable: dt * rate = %.3g exceeds %.2g; use the "
                  "semi-Lagrangian scheme or a smaller dt",
                  rate * dt, kStabilityLimit);
    throw NumericalError(msg);
  }

  auto at = [&](const Vec& z) { return lat.interpolate(next, z); };
  const double v0 = at(x);
  double lv = 0.0;
  for (int a = 0; a < d; ++a) {
    const Vec ea = Vec::Unit(d, a) * h;
    const double vp = at(x + ea), vm = at(x - ea);
    lv += b(a) > 0.0 ? b(a) * (vp - v0) / h : b(a) * (v0 - vm) / h;
    lv += 0.5 * g(a, a) * (vp - 2.0 * v0 + vm) / (h * h);
    for (int c = a + 1; c < d; ++c) {
      const Vec ec = Vec::Unit(d, c) * h;
      const double cross = at(x + ea + ec) - at(x + ea - ec) - at(x - ea + ec) + at(x - ea - ec);
      lv += g(a, c) * cross / (4.0 * h * h);
    }
  }
  for (const auto& a : atoms) lv += a.rate * (read(lat, next, x + a.displacement, exc) - v0);
  return spec.running_payoff(t, x, m, u) * dt + v0 + dt * lv;
}

}  // namespace

ValueGrid solve_stochastic_value(const GeneratorSpec& spec, const FlowOfProbabilities& zeta,
                                 const GridConfig& config) {
  if (config.scheme == DiffusionScheme::central_explicit) {
    return sweep(spec, zeta, config,
                 [&spec](const SpaceLattice& lat, double t, double dt, const EmpiricalMeasure& m,
                         const Vec& x, const Vec& u, std::span<const double> next, double& exc) {
                   return central_explicit_step(spec, lat, t, dt, m, x, u, next, exc);
                 });
  }
  return sweep(spec, zeta, config,
               [&spec](const SpaceLattice& lat, double t, double dt, const EmpiricalMeasure& m,
                       const Vec& x, const Vec& u, std::span<const double> next, double& exc) {
                 return semi_lagrangian_step(spec, lat, t, dt, m, x, u, next, exc);
               });
}

double evaluate(const ValueGrid& value, double s, const Vec& xi) {
  if (xi.size() != value.lattice().dim()) throw ValidationError("point dimension differs from the grid");
  return value.lattice().interpolate(value.slice(value.time_grid().nearest(s)), xi);
}

ControlPolicy grid_feedback(const ValueGrid& value) {
  if (!value.has_policy()) throw ValidationError("value grid carries no policy table");
  auto v = std::make_shared<const ValueGrid>(value);
  return ControlPolicy::feedback([v](double t, const Vec& x, const EmpiricalMeasure&) {
    return v->policy_at(v->time_grid().interval(t), v->lattice().nearest(x));
  });
}

FeedbackFn exact_feedback(const ValueGrid& value, const GeneratorSpec& spec,
                          const FlowOfProbabilities& mu) {
  if (!(value.time_grid() == mu.time_grid()))
    throw ValidationError("value grid and flow use different time grids");
  auto v = std::make_shared<const ValueGrid>(value);
  auto sp = std::make_shared<const GeneratorSpec>(spec.deterministic_part());
  auto flow = std::make_shared<const FlowOfProbabilities>(mu);
  return [v, sp, flow](std::size_t node, const Vec& x) {
    const double t = v->time_grid()[node];
    const double dt = v->time_grid()[node + 1] - t;
    const EmpiricalMeasure& m = flow->at_node(node);
    const auto next = v->slice(node + 1);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t u = 0; u < sp->controls.size(); ++u) {
      const Vec& cu = sp->controls[u];
      const double val = sp->running_payoff(t, x, m, cu) * dt +
                         v->lattice().interpolate(next, x + dt * sp->drift(t, x, m, cu));
      if (val > best) {
        best = val;
        arg = u;
      }
    }
    return arg;
  };
}

DeviationReport check_deviation(const ValueGrid& value, const GeneratorSpec& spec,
                                const FlowOfProbabilities& zeta,
                                const std::vector<ControlPolicy>& policies,
                                const DeviationConfig& config) {
  DeviationReport report;
  report.max_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < policies.size(); ++p) {
    for (const auto& [s, xi] : config.starts) {
      if (zeta.time_grid().find(s) == TimeGrid::npos)
        throw ValidationError("deviation start time must be a flow node");
      SimulationConfig sim = config.simulation;
      sim.start_time = s;
      const PathEnsemble ens = simulate(spec, policies[p], zeta, EmpiricalMeasure::dirac(xi), sim);
      const MeanWithError pay = realized_payoff(ens, spec, zeta);
      DeviationEntry e;
      e.policy = p;
      e.s = s;
      e.xi = xi;
      e.value = evaluate(value, s, xi);
      e.payoff = pay.mean;
      e.std_err = pay.std_err;
      e.gap = pay.mean - e.value;
      report.max_std_err = std::max(report.max_std_err, e.std_err);
      if (e.gap > report.max_gap) {
        report.max_gap = e.gap;
        report.std_err_at_max = e.std_err;
      }
      report.entries.push_back(std::move(e));
    }
  }
  if (report.entries.empty()) report.max_gap = 0.0;
  return report;
}

void write_value_grid(std::ostream& os, const ValueGrid& value) {
  const SpaceLattice& lat = value.lattice();
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  os << "value_grid 1\n";
  os << "dim " << lat.dim() << " half_width " << num(lat.half_width()) << " h "
     << num(lat.spacing()) << '\n';
  os << "times " << value.time_grid().size() << '\n';
  for (std::size_t i = 0; i < value.time_grid().size(); ++i)
    os << (i ? " " : "") << num(value.time_grid()[i]);
  os << '\n';
  for (std::size_t i = 0; i < value.time_grid().size(); ++i) {
    const auto row = value.slice(i);
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? " " : "") << num(row[j]);
    os << '\n';
  }
  os << "policy " << (value.has_policy() ? 1 : 0) << '\n';
  if (value.has_policy()) {
    for (std::size_t i = 0; i < value.time_grid().steps(); ++i) {
      for (std::size_t j = 0; j < lat.size(); ++j)
        os << (j ? " " : "") << value.policy_at(i, j);
      os << '\n';
    }
  }
}

ValueGrid read_value_grid(std::istream& is) {
  auto expect = [&](const char* word) {
    std::string w;
    if (!(is >> w) || w != word)
      throw ValidationError(std::string("value grid file: expected '") + word + "'");
  };
  int version = 0, dim = 0;
  double half_width = 0.0, h = 0.0;
  std::size_t n_times = 0;
  expect("value_grid");
  is >> version;
  if (version != 1) throw ValidationError("value grid file: unsupported version");
  expect("dim");
  is >> dim;
  expect("half_width");
  is >> half_width;
  expect("h");
  is >> h;
  expect("times");
  is >> n_times;
  if (!is || n_times < 2) throw ValidationError("value grid file: bad header");
  std::vector<double> nodes(n_times);
  for (double& t : nodes) is >> t;
  ValueGrid v(TimeGrid(std::move(nodes)), SpaceLattice(dim, half_width, h));
  for (double& x : v.values()) is >> x;
  expect("policy");
  int has_policy = 0;
  is >> has_policy;
  if (has_policy) {
    v.policy().resize(v.time_grid().steps() * v.lattice().size());
    for (auto& p : v.policy()) {
      unsigned u = 0;
      is >> u;
      p = static_cast<std::uint16_t>(u);
    }
  }
  if (!is) throw ValidationError("value grid file: truncated data");
  return v;
}

}  // namespace mfg
