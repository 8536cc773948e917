#include "mfg/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "mfg/parallel.hpp"
#include "mfg/random.hpp"

namespace mfg {

namespace {

constexpr std::uint64_t kInitialStreamTag = 0x1A2B3C4DULL;

struct FineGrid {
  TimeGrid grid;
  std::vector<std::size_t> coarse_of_step;  // left coarse node of each fine step
  std::vector<std::size_t> fine_of_coarse;  // fine index of each coarse node
};

FineGrid refine(const TimeGrid& coarse, double dt) {
  if (!(dt > 0.0)) throw ValidationError("simulation dt must be positive");
  FineGrid fg;
  std::vector<double> nodes{0.0};
  fg.fine_of_coarse.push_back(0);
  for (std::size_t i = 0; i + 1 < coarse.size(); ++i) {
    const double width = coarse[i + 1] - coarse[i];
    const double ratio = width / dt;
    const auto r = static_cast<std::size_t>(std::llround(ratio));
    if (r == 0 || std::abs(ratio - static_cast<double>(r)) > 1e-6)
      throw ValidationError("simulation dt must divide the flow grid spacing");
    for (std::size_t k = 1; k <= r; ++k) {
      nodes.push_back(k == r ? coarse[i + 1] : coarse[i] + width * static_cast<double>(k) / r);
      fg.coarse_of_step.push_back(i);
    }
    fg.fine_of_coarse.push_back(nodes.size() - 1);
  }
  fg.grid = TimeGrid(std::move(nodes));
  return fg;
}

template <typename MeasureAt>
PathEnsemble run(const GeneratorSpec& spec, const ControlPolicy& policy,
                 const TimeGrid& coarse, const EmpiricalMeasure& m0,
                 const SimulationConfig& cfg, MeasureAt&& measure_at) {
  spec.validate();
  if (m0.dim() != spec.dim) throw ValidationError("initial measure dimension differs from the spec");
  if (cfg.particles == 0) throw ValidationError("simulation needs at least one particle");
  if (spec.controls.size() > 65535) throw ValidationError("too many controls for the ensemble");
  const FineGrid fg = refine(coarse, cfg.dt);
  const std::size_t coarse_start = coarse.find(cfg.start_time);
  if (coarse_start == TimeGrid::npos) throw ValidationError("start time is not a flow grid node");
  const std::size_t start = fg.fine_of_coarse[coarse_start];
  const std::size_t n = cfg.particles;
  const int d = spec.dim;
  PathEnsemble ens(fg.grid, start, n, d, cfg.seed, cfg.dt);

  if (!cfg.initial_points.empty() && cfg.initial_points.size() != n)
    throw ValidationError("initial points must match the particle count");
  const auto initial =
      cfg.initial_points.empty() ? sample_initial(m0, n, cfg.seed) : cfg.initial_points;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t k = 0; k <= start; ++k) ens.set_state(p, k, initial[p]);

  std::vector<CounterRng> rngs;
  rngs.reserve(n);
  for (std::size_t p = 0; p < n; ++p) rngs.emplace_back(cfg.seed, p);

  const std::size_t n_jumps = spec.jumps.size();
  for (std::size_t k = start; k + 1 < fg.grid.size(); ++k) {
    const double t = fg.grid[k];
    const double dt = fg.grid[k + 1] - t;
    const double sqrt_dt = std::sqrt(dt);
    const EmpiricalMeasure& m = measure_at(fg.coarse_of_step[k], k, ens);
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      std::vector<JumpAtom> atoms(n_jumps);
      for (std::size_t p = begin; p < end; ++p) {
        const Vec x = ens.state(p, k);
        const std::size_t ui = policy(t, x, m);
        if (ui >= spec.controls.size()) throw ValidationError("policy returned an unknown control");
        const Vec& u = spec.controls[ui];
        Vec drift = spec.drift(t, x, m, u);
        for (std::size_t j = 0; j < n_jumps; ++j) {
          atoms[j] = spec.jumps[j](t, x, m, u);
          if (atoms[j].rate < 0.0) throw ValidationError("negative jump rate");
          if (atoms[j].rate * dt > 0.5)
            throw NumericalError("jump rate times dt exceeds 0.5; refine the step");
          if (atoms[j].displacement.norm() <= 1.0) drift -= atoms[j].rate * atoms[j].displacement;
        }
        Vec next = x + dt * drift;
        if (spec.diffusion) {
          const Mat factor = diffusion_factor(spec.diffusion(t, x, m, u));
          Vec w(d);
          for (int a = 0; a < d; ++a) w(a) = rngs[p].normal();
          next += sqrt_dt * (factor * w);
        }
        bool jumped = false;
        for (std::size_t j = 0; j < n_jumps; ++j) {
          if (rngs[p].uniform() < atoms[j].rate * dt) {
            next += atoms[j].displacement;
            jumped = true;
          }
        }
        if (!next.allFinite()) throw NumericalError("simulation produced a non-finite state");
        ens.set_state(p, k + 1, next);
        ens.set_control(p, k, ui);
        if (jumped) ens.set_jumped(p, k + 1);
        ens.payoff(p, k + 1) = ens.payoff(p, k) + spec.running_payoff(t, x, m, u) * dt;
      }
    });
  }
  return ens;
}

}  // namespace

ControlPolicy ControlPolicy::feedback(Rule rule) {
  ControlPolicy p;
  p.rule_ = std::move(rule);
  return p;
}

ControlPolicy ControlPolicy::open_loop(PiecewiseControl control) {
  ControlPolicy p;
  p.rule_ = std::move(control);
  return p;
}

ControlPolicy ControlPolicy::constant(std::size_t control) {
  ControlPolicy p;
  p.rule_ = control;
  return p;
}

std::size_t ControlPolicy::operator()(double t, const Vec& x, const EmpiricalMeasure& m) const {
  if (const auto* r = std::get_if<Rule>(&rule_)) return (*r)(t, x, m);
  if (const auto* v = std::get_if<PiecewiseControl>(&rule_))
    return v->values[v->time_grid.interval(t)];
  return std::get<std::size_t>(rule_);
}

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t start_index, std::size_t paths, int dim,
                           std::uint64_t seed, double dt)
    : grid_(std::move(grid)), start_(start_index), paths_(paths), dim_(dim), seed_(seed), dt_(dt) {
  const std::size_t cells = paths_ * grid_.size();
  states_.assign(cells * static_cast<std::size_t>(dim_), 0.0);
  payoff_.assign(cells, 0.0);
  controls_.assign(cells, 0);
  jumped_.assign(cells, 0);
}

Vec PathEnsemble::state(std::size_t p, std::size_t k) const {
  const double* src = &states_[(p * nodes() + k) * static_cast<std::size_t>(dim_)];
  Vec x(dim_);
  for (int a = 0; a < dim_; ++a) x(a) = src[a];
  return x;
}

void PathEnsemble::set_state(std::size_t p, std::size_t k, const Vec& x) {
  double* dst = &states_[(p * nodes() + k) * static_cast<std::size_t>(dim_)];
  for (int a = 0; a < dim_; ++a) dst[a] = x(a);
}

EmpiricalMeasure PathEnsemble::law_at(std::size_t k) const {
  std::vector<Vec> pts(paths_);
  for (std::size_t p = 0; p < paths_; ++p) pts[p] = state(p, k);
  return EmpiricalMeasure::uniform(std::move(pts));
}

std::vector<Vec> sample_initial(const EmpiricalMeasure& m0, std::size_t n, std::uint64_t seed) {
  std::vector<double> cdf(m0.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < m0.size(); ++i) cdf[i] = (acc += m0.weight(i));
  std::vector<Vec> out(n);
  for (std::size_t p = 0; p < n; ++p) {
    CounterRng rng(seed ^ kInitialStreamTag, p);
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), m0.size() - 1);
    out[p] = m0.point(i);
  }
  return out;
}

PathEnsemble simulate(const GeneratorSpec& spec, const ControlPolicy& policy,
                      const FlowOfProbabilities& zeta, const EmpiricalMeasure& m0,
                      const SimulationConfig& config) {
  if (zeta.dim() != spec.dim) throw ValidationError("flow dimension differs from the spec");
  return run(spec, policy, zeta.time_grid(), m0, config,
             [&](std::size_t coarse, std::size_t, const PathEnsemble&) -> const EmpiricalMeasure& {
               return zeta.at_node(coarse);
             });
}

PathEnsemble simulate_interacting(const GeneratorSpec& spec, const ControlPolicy& policy,
                                  const TimeGrid& coarse_grid, const EmpiricalMeasure& m0,
                                  const SimulationConfig& config) {
  std::size_t cached_node = TimeGrid::npos;
  EmpiricalMeasure cached;
  // The first fine step of each coarse interval sees the particles at the
  // coarse node; later steps in the same interval reuse that law.
  return run(spec, policy, coarse_grid, m0, config,
             [&](std::size_t coarse, std::size_t fine, const PathEnsemble& ens)
                 -> const EmpiricalMeasure& {
               if (coarse != cached_node) {
                 cached = ens.law_at(fine);
                 cached_node = coarse;
               }
               return cached;
             });
}

FlowOfProbabilities empirical_flow(const PathEnsemble& ens, const TimeGrid& coarse_grid) {
  std::vector<EmpiricalMeasure> ms;
  ms.reserve(coarse_grid.size());
  for (std::size_t i = 0; i < coarse_grid.size(); ++i) {
    const std::size_t k = ens.time_grid().find(coarse_grid[i]);
    if (k == TimeGrid::npos) throw ValidationError("coarse node is not a simulation node");
    ms.push_back(ens.law_at(k));
  }
  return FlowOfProbabilities(coarse_grid, std::move(ms));
}

namespace {

MeanWithError mean_and_error(const std::vector<double>& v) {
  MeanWithError r;
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double q = 0.0;
    for (double x : v) q += (x - r.mean) * (x - r.mean);
    r.std_err = std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return r;
}

}  // namespace

MeanWithError martingale_residual(const PathEnsemble& ens, const GeneratorSpec& spec,
                                  const FlowOfProbabilities& zeta, const TestFunction& phi,
                                  double s, double t) {
  const TimeGrid& grid = ens.time_grid();
  const std::size_t ks = grid.find(s), kt = grid.find(t);
  if (ks == TimeGrid::npos || kt == TimeGrid::npos) throw ValidationError("s and t must be grid nodes");
  if (!(ks < kt)) throw ValidationError("martingale residual needs s < t");
  if (ks < ens.start_index()) throw ValidationError("s precedes the ensemble start");
  std::vector<std::size_t> coarse(kt);
  for (std::size_t k = ks; k < kt; ++k) coarse[k] = zeta.time_grid().interval(grid[k]);
  std::vector<double> r(ens.paths());
  for (std::size_t p = 0; p < ens.paths(); ++p) {
    double integral = 0.0;
    for (std::size_t k = ks; k < kt; ++k) {
      const double dt = grid[k + 1] - grid[k];
      integral += apply_generator(spec, phi, grid[k], ens.state(p, k), zeta.at_node(coarse[k]),
                                  spec.controls[ens.control(p, k)]) *
                  dt;
    }
    r[p] = evaluate_test(phi, ens.state(p, kt)) - evaluate_test(phi, ens.state(p, ks)) - integral;
  }
  return mean_and_error(r);
}

MeanWithError realized_payoff(const PathEnsemble& ens, const GeneratorSpec& spec,
                              const FlowOfProbabilities& zeta) {
  const std::size_t last = ens.nodes() - 1;
  const std::size_t s = ens.start_index();
  const EmpiricalMeasure& m_t = zeta.at_node(zeta.size() - 1);
  std::vector<double> v(ens.paths());
  for (std::size_t p = 0; p < ens.paths(); ++p)
    v[p] = spec.terminal_payoff(ens.state(p, last), m_t) + ens.payoff(p, last) - ens.payoff(p, s);
  return mean_and_error(v);
}

void write_ensemble(std::ostream& os, const PathEnsemble& ens, const ControlSet& controls) {
  os << "path node t";
  for (int a = 0; a < ens.dim(); ++a) os << " x" << a;
  os << " z";
  for (int a = 0; a < controls.dim(); ++a) os << " u" << a;
  os << " jump\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.12e", v);
    os << buf;
  };
  for (std::size_t p = 0; p < ens.paths(); ++p) {
    for (std::size_t k = 0; k < ens.nodes(); ++k) {
      os << p << ' ' << k;
      num(ens.time_grid()[k]);
      const Vec x = ens.state(p, k);
      for (int a = 0; a < ens.dim(); ++a) num(x(a));
      num(ens.payoff(p, k));
      const Vec& u = controls[k + 1 < ens.nodes() ? ens.control(p, k) : ens.control(p, k ? k - 1 : 0)];
      for (int a = 0; a < controls.dim(); ++a) num(u(a));
      os << ' ' << (ens.jumped(p, k) ? 1 : 0) << '\n';
    }
  }
}

}  // namespace mfg
