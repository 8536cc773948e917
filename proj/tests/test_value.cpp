#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "mfg/value.hpp"

using namespace mfg;

namespace {

FlowOfProbabilities origin_flow(double horizon, std::size_t steps) {
  return FlowOfProbabilities::constant(TimeGrid::uniform(horizon, steps),
                                       EmpiricalMeasure::dirac(make_vec({0.0})));
}

GridConfig box(double half_width, double h) {
  GridConfig c;
  c.half_width = half_width;
  c.h = h;
  return c;
}

double max_error_steer(double h, double dt) {
  const auto spec = fixtures::steer_to_origin(3);
  const auto mu = origin_flow(1.0, static_cast<std::size_t>(std::llround(1.0 / dt)));
  const auto v = solve_deterministic_value(spec, mu, box(3.0, h));
  double err = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < v.lattice().size(); ++j) {
      const double x = v.lattice().node(j)(0);
      if (std::abs(x) > 2.0) continue;
      err = std::max(err, std::abs(v.at(i, j) - fixtures::steer_to_origin_value(mu.time_grid()[i], x, 1.0)));
    }
  return err;
}

}  // namespace

TEST_CASE("lattice geometry and interpolation") {
  const SpaceLattice lat(1, 1.0, 0.25);
  CHECK(lat.per_axis() == 9);
  CHECK(lat.node(0)(0) == doctest::Approx(-1.0));
  CHECK(lat.nearest(make_vec({0.3})) == 5);
  std::vector<double> vals(lat.size());
  for (std::size_t j = 0; j < lat.size(); ++j) vals[j] = lat.node(j)(0) * lat.node(j)(0);
  CHECK(lat.interpolate(vals, make_vec({0.5})) == doctest::Approx(0.25));
  CHECK(lat.interpolate(vals, make_vec({0.125})) == doctest::Approx(0.5 * (0.0 + 0.0625)));
  // outside: continue the boundary cell (0.75 -> 0.5625, 1 -> 1) linearly
  CHECK(lat.interpolate(vals, make_vec({1.5})) == doctest::Approx(1.0 + 0.5 * (1.0 - 0.5625) / 0.25));
  CHECK(lat.excursion(make_vec({1.5})) == doctest::Approx(0.5));
  CHECK(SpaceLattice(1, 0.9, 0.25).half_width() == doctest::Approx(1.0));

  const SpaceLattice sq(2, 1.0, 0.5);
  std::vector<double> plane(sq.size());
  for (std::size_t j = 0; j < sq.size(); ++j) plane[j] = 2.0 * sq.node(j)(0) - sq.node(j)(1);
  CHECK(sq.interpolate(plane, make_vec({0.3, -0.7})) == doctest::Approx(1.3));
  CHECK(sq.interpolate(plane, make_vec({2.0, 3.0})) == doctest::Approx(1.0));
}

TEST_CASE("deterministic value without dynamics") {
  auto spec = fixtures::steering(3);
  spec.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return zeros(1); };
  spec.terminal_payoff = [](const Vec& x, const EmpiricalMeasure&) { return std::sin(x(0)); };
  const auto mu = origin_flow(1.0, 10);
  SUBCASE("stationary") {
    const auto v = solve_deterministic_value(spec, mu, box(2.0, 0.1));
    for (std::size_t i = 0; i < mu.size(); ++i)
      for (std::size_t j = 0; j < v.lattice().size(); ++j)
        CHECK(v.at(i, j) == doctest::Approx(std::sin(v.lattice().node(j)(0))).epsilon(1e-12));
  }
  SUBCASE("pure accumulation") {
    spec.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return 1.0; };
    const auto v = solve_deterministic_value(spec, mu, box(2.0, 0.1));
    for (std::size_t i = 0; i < mu.size(); ++i)
      CHECK(v.at(i, 7) == doctest::Approx(std::sin(v.lattice().node(7)(0)) + 1.0 - mu.time_grid()[i]));
  }
}

TEST_CASE("steering to the origin matches the closed form") {
  // with h = dt and unit speeds every foot is a node, so the nodes are exact
  CHECK(max_error_steer(0.05, 0.05) <= 1e-12);
  // off the speed lattice the error stays within the h + dt budget
  CHECK(max_error_steer(0.04, 0.05) <= 2.0 * (0.04 + 0.05));
}

TEST_CASE("stochastic solver degenerates to the deterministic one") {
  auto spec = fixtures::steer_to_origin(5);
  spec.running_payoff = [](double, const Vec& x, const EmpiricalMeasure&, const Vec& u) {
    return -0.5 * u.squaredNorm() - 0.1 * x.squaredNorm();
  };
  const auto mu = origin_flow(1.0, 20);
  const auto a = solve_deterministic_value(spec, mu, box(2.0, 0.05));
  const auto b = solve_stochastic_value(spec, mu, box(2.0, 0.05));
  double diff = 0.0;
  for (std::size_t k = 0; k < a.values().size(); ++k) diff = std::max(diff, std::abs(a.values()[k] - b.values()[k]));
  CHECK(diff <= 1e-12);
}

TEST_CASE("linear payoff is harmonic under diffusion and compensated jumps") {
  const auto mu = origin_flow(1.0, 20);
  SUBCASE("semi-Lagrangian Brownian") {
    const auto v = solve_stochastic_value(fixtures::brownian(1, 0.5), mu, box(3.0, 0.05));
    for (std::size_t j = 0; j < v.lattice().size(); j += 7)
      CHECK(std::abs(v.at(0, j) - v.lattice().node(j)(0)) < 3.0 * (0.05 + 0.05));
  }
  SUBCASE("central explicit Brownian") {
    GridConfig c = box(3.0, 0.25);
    c.scheme = DiffusionScheme::central_explicit;
    const auto v = solve_stochastic_value(fixtures::brownian(1, 0.5), mu, c);
    for (std::size_t j = 0; j < v.lattice().size(); ++j)
      CHECK(std::abs(v.at(0, j) - v.lattice().node(j)(0)) < 3.0 * (0.25 + 0.05));
  }
  SUBCASE("two-dimensional Brownian") {
    const auto mu2 = FlowOfProbabilities::constant(TimeGrid::uniform(1.0, 10),
                                                   EmpiricalMeasure::dirac(zeros(2)));
    const auto v = solve_stochastic_value(fixtures::brownian(2, 0.5), mu2, box(2.0, 0.1));
    CHECK(evaluate(v, 0.0, make_vec({0.35, -0.4})) == doctest::Approx(0.35).epsilon(1e-9));
  }
  SUBCASE("compensated jumps") {
    for (double y : {0.4, 1.5}) {
      const auto v = solve_stochastic_value(fixtures::compensated_jump(2.0, y), mu, box(4.0, 0.05));
      for (double x : {-1.0, 0.0, 0.55})
        CHECK(std::abs(evaluate(v, 0.0, make_vec({x})) - x) < 3.0 * (0.05 + 0.05));
    }
  }
}

TEST_CASE("explicit scheme refuses unstable steps") {
  GridConfig c = box(3.0, 0.01);
  c.scheme = DiffusionScheme::central_explicit;
  CHECK_THROWS_AS(solve_stochastic_value(fixtures::brownian(1, 1.0), origin_flow(1.0, 20), c), NumericalError);
}

TEST_CASE("evaluate snaps time and interpolates space") {
  const auto spec = fixtures::steer_to_origin(3);
  const auto mu = origin_flow(1.0, 10);
  const auto v = solve_deterministic_value(spec, mu, box(2.0, 0.1));
  const std::size_t j = v.lattice().nearest(make_vec({0.5}));
  CHECK(evaluate(v, 0.3, v.lattice().node(j)) == v.at(3, j));
  CHECK(evaluate(v, 0.31, make_vec({0.55})) == doctest::Approx(0.5 * (v.at(3, j) + v.at(3, j + 1))));
  // beyond the box the boundary slope continues
  const std::size_t last = v.lattice().size() - 1;
  const double slope = (v.at(10, last) - v.at(10, last - 1)) / 0.1;
  CHECK(evaluate(v, 1.0, make_vec({2.5})) == doctest::Approx(v.at(10, last) + 0.5 * slope));
}

TEST_CASE("comparison principle") {
  auto lo = fixtures::steer_to_origin(5);
  auto hi = lo;
  hi.running_payoff = [](double, const Vec& x, const EmpiricalMeasure&, const Vec&) { return 0.1 * std::cos(x(0)) + 0.2; };
  hi.terminal_payoff = [](const Vec& x, const EmpiricalMeasure&) { return -x.norm() + 0.05; };
  const auto mu = origin_flow(1.0, 20);
  const auto a = solve_stochastic_value(lo, mu, box(2.0, 0.05));
  const auto b = solve_deterministic_value(hi, mu, box(2.0, 0.05));
  for (std::size_t k = 0; k < a.values().size(); ++k) CHECK(a.values()[k] <= b.values()[k] + 1e-12);
}

TEST_CASE("value dominates every reachable trajectory") {
  const auto spec = fixtures::steer_to_origin(3);
  const auto mu = origin_flow(1.0, 20);
  const auto v = solve_deterministic_value(spec, mu, box(3.0, 0.05));
  for (double xi : {-1.4, 0.3, 2.0}) {
    const double value = evaluate(v, 0.2, make_vec({xi}));
    for (const auto& tr : reachable_cloud(spec, mu, 0.2, make_vec({xi}), 40, 17))
      CHECK(value >= spec.terminal_payoff(tr.x.back(), mu.at_node(20)) + tr.z.back() - (0.05 + 0.05));
  }
}

TEST_CASE("dynamic programming residual vanishes on nodes") {
  auto spec = fixtures::steer_to_origin(5);
  spec.running_payoff = [](double, const Vec& x, const EmpiricalMeasure&, const Vec& u) {
    return -0.5 * u.squaredNorm() - 0.1 * x.squaredNorm();
  };
  const auto mu = origin_flow(1.0, 20);
  const auto v = solve_deterministic_value(spec, mu, box(2.0, 0.05));
  const double dt = 0.05;
  const auto& m = mu.at_node(0);
  for (std::size_t i : {std::size_t{0}, std::size_t{10}, std::size_t{19}})
    for (std::size_t j = 5; j < v.lattice().size() - 5; j += 9) {
      const Vec x = v.lattice().node(j);
      double best = -INFINITY;
      for (const auto& u : spec.controls.points())
        best = std::max(best, spec.running_payoff(0.0, x, m, u) * dt +
                                  v.lattice().interpolate(v.slice(i + 1), x + spec.drift(0.0, x, m, u) * dt));
      CHECK(v.at(i, j) == doctest::Approx(best).epsilon(1e-13));
    }
}

TEST_CASE("deviation check") {
  const auto mu = origin_flow(1.0, 20);
  SimulationConfig sim;
  sim.particles = 200;
  sim.dt = 0.05;
  sim.seed = 3;
  DeviationConfig cfg{{{0.0, make_vec({0.5})}, {0.5, make_vec({-0.2})}}, sim};
  std::vector<ControlPolicy> policies{ControlPolicy::constant(0), ControlPolicy::constant(1),
                                      ControlPolicy::constant(2)};
  SUBCASE("no dynamics and no running payoff: every policy earns the value") {
    auto spec = fixtures::steer_to_origin(3);
    spec.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return zeros(1); };
    const auto v = solve_deterministic_value(spec, mu, box(2.0, 0.05));
    const auto r = check_deviation(v, spec, mu, policies, cfg);
    CHECK(std::abs(r.max_gap) < 1e-12);
    CHECK(r.entries.size() == 6);
  }
  SUBCASE("optimal feedback attains, worst control loses") {
    auto spec = fixtures::steering(3);
    spec.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) {
      return -0.5 * u.squaredNorm();
    };
    const auto v = solve_deterministic_value(spec, mu, box(2.0, 0.05));
    const auto best = check_deviation(v, spec, mu, {grid_feedback(v)}, cfg);
    CHECK(std::abs(best.max_gap) < 1e-9);
    const auto worst = check_deviation(v, spec, mu, {ControlPolicy::constant(0)}, cfg);
    CHECK(worst.max_gap < -0.2);
  }
}

TEST_CASE("value grid text round trip") {
  const auto spec = fixtures::steer_to_origin(3);
  const auto mu = origin_flow(1.0, 5);
  const auto v = solve_deterministic_value(spec, mu, box(1.0, 0.25));
  std::stringstream ss;
  write_value_grid(ss, v);
  const auto w = read_value_grid(ss);
  CHECK(w.values() == v.values());
  CHECK(w.policy() == v.policy());
  CHECK(w.time_grid() == v.time_grid());
  CHECK(w.lattice().per_axis() == v.lattice().per_axis());
  std::istringstream bad("value_grid 9\n");
  CHECK_THROWS_AS(read_value_grid(bad), ValidationError);
}

TEST_CASE("automatic box follows the a priori bound") {
  const auto mu = FlowOfProbabilities::constant(TimeGrid::uniform(1.0, 4),
                                                EmpiricalMeasure::uniform({make_vec({-1.0}), make_vec({1.0})}));
  CHECK(auto_half_width(mu, 1.0) == doctest::Approx(1.2 * (1.0 + 1.0 + 1.0) * std::exp(1.0)));
}
