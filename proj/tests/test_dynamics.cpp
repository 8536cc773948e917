#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "mfg/dynamics.hpp"

using namespace mfg;

namespace {

FlowOfProbabilities still_flow(double horizon, std::size_t steps) {
  return FlowOfProbabilities::constant(TimeGrid::uniform(horizon, steps),
                                       EmpiricalMeasure::dirac(make_vec({0.0})));
}

GeneratorSpec quadratic_cost(int controls) {
  auto s = fixtures::steering(controls);
  s.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) {
    return -0.5 * u.squaredNorm();
  };
  return s;
}

}  // namespace

TEST_CASE("hamiltonian of the steering game") {
  const auto s = fixtures::steering(3);
  const auto m = EmpiricalMeasure::dirac(make_vec({0.0}));
  const Vec x = make_vec({0.4});
  for (double p : {-2.0, -0.3, 0.0, 0.7, 5.0})
    CHECK(hamiltonian(s, 0.0, x, m, make_vec({p})) == doctest::Approx(std::abs(p)));
  CHECK(argmax_control(s, 0.0, x, m, make_vec({1.0})) == 2);
  CHECK(argmax_control(s, 0.0, x, m, make_vec({-1.0})) == 0);
  // every control ties at p = 0: lowest index wins
  CHECK(argmax_control(s, 0.0, x, m, make_vec({0.0})) == 0);
}

TEST_CASE("hamiltonian with quadratic control cost against a fine grid") {
  const auto coarse = quadratic_cost(21);
  const auto fine = quadratic_cost(10001);
  const auto m = EmpiricalMeasure::dirac(make_vec({0.0}));
  const Vec x = make_vec({0.0});
  const double h_fine = hamiltonian(fine, 0.0, x, m, make_vec({0.5}));
  CHECK(h_fine == doctest::Approx(0.125).epsilon(1e-8));
  // control grid spacing 0.1: error at most half a spacing squared over two
  CHECK(std::abs(hamiltonian(coarse, 0.0, x, m, make_vec({0.5})) - h_fine) <= 0.5 * 0.05 * 0.05 + 1e-12);
  CHECK(coarse.controls[argmax_control(coarse, 0.0, x, m, make_vec({0.5}))](0) ==
        doctest::Approx(0.5));
  // definition of the max
  for (std::size_t k = 0; k < coarse.controls.size(); ++k) {
    const Vec& u = coarse.controls[k];
    CHECK(hamiltonian(coarse, 0.0, x, m, make_vec({0.37})) >=
          0.37 * u(0) + coarse.running_payoff(0.0, x, m, u) - 1e-15);
  }
}

TEST_CASE("characteristics of simple fields") {
  const auto mu = still_flow(1.0, 20);
  const TimeGrid& grid = mu.time_grid();
  SUBCASE("zero drift stays put") {
    auto s = fixtures::steering(3);
    const auto tr = integrate_characteristic(s, mu, 0.0, make_vec({0.3}), PiecewiseControl::constant(grid, 1));
    for (std::size_t k = 0; k < grid.size(); ++k) {
      CHECK(tr.x[k](0) == 0.3);
      CHECK(tr.z[k] == 0.0);
    }
  }
  SUBCASE("unit drift moves linearly from s") {
    auto s = fixtures::steering(3);
    const auto tr =
        integrate_characteristic(s, mu, 0.25, make_vec({0.3}), PiecewiseControl::constant(grid, 2));
    CHECK(tr.start_index == 5);
    for (std::size_t k = 5; k < grid.size(); ++k) CHECK(tr.x[k](0) == doctest::Approx(0.3 + grid[k] - 0.25));
    CHECK(tr.x[2](0) == 0.3);
  }
  SUBCASE("constant running payoff accumulates exactly") {
    auto s = fixtures::steering(3);
    s.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return 1.75; };
    const auto tr = integrate_characteristic(s, mu, 0.5, make_vec({0.0}), PiecewiseControl::constant(grid, 0));
    for (std::size_t k = 10; k < grid.size(); ++k) CHECK(std::abs(tr.z[k] - 1.75 * (grid[k] - 0.5)) < 1e-14);
  }
}

TEST_CASE("RK4 decay error is fourth order") {
  auto s = fixtures::steering(1);
  s.drift = [](double, const Vec& x, const EmpiricalMeasure&, const Vec&) { return Vec(-x); };
  auto err = [&](std::size_t steps) {
    const auto mu = still_flow(1.0, steps);
    const auto tr = integrate_characteristic(s, mu, 0.0, make_vec({1.0}),
                                             PiecewiseControl::constant(mu.time_grid(), 0));
    return std::abs(tr.x.back()(0) - std::exp(-1.0));
  };
  const double e1 = err(10), e2 = err(20);
  CHECK(e1 < 1e-6);
  CHECK(e1 / e2 > 12.0);
}

TEST_CASE("Gronwall stability under a Lipschitz field") {
  auto s = fixtures::steering(3);
  const double k_lip = 0.8;
  s.drift = [k_lip](double, const Vec& x, const EmpiricalMeasure&, const Vec& u) {
    return make_vec({k_lip * std::sin(x(0)) + u(0)});
  };
  const auto mu = still_flow(1.0, 50);
  const auto v = PiecewiseControl::constant(mu.time_grid(), 2);
  const auto a = integrate_characteristic(s, mu, 0.0, make_vec({0.1}), v);
  const auto b = integrate_characteristic(s, mu, 0.0, make_vec({0.15}), v);
  const double dt = 0.02;
  for (std::size_t k = 0; k < a.x.size(); ++k)
    CHECK(std::abs(a.x[k](0) - b.x[k](0)) <= 0.05 * std::exp(k_lip * mu.time_grid()[k]) * (1 + 10 * dt));
}

TEST_CASE("reachable cloud") {
  const auto mu = still_flow(1.0, 40);
  SUBCASE("constant controls first") {
    const auto s = fixtures::steering(3);
    const auto cloud = reachable_cloud(s, mu, 0.0, make_vec({0.0}), 3);
    REQUIRE(cloud.size() == 3);
    CHECK(cloud[0].x.back()(0) == doctest::Approx(-1.0));
    CHECK(cloud[1].x.back()(0) == doctest::Approx(0.0));
    CHECK(cloud[2].x.back()(0) == doctest::Approx(1.0));
  }
  SUBCASE("zero drift collapses the cloud") {
    auto s = fixtures::steering(3);
    s.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return zeros(1); };
    for (const auto& tr : reachable_cloud(s, mu, 0.0, make_vec({0.2}), 12, 5)) CHECK(tr.x.back()(0) == 0.2);
  }
  SUBCASE("bang-bang endpoints fill the reachable interval") {
    auto s = fixtures::steering(3);
    s.controls = ControlSet({make_vec({-1.0}), make_vec({1.0})});
    const auto cloud = reachable_cloud(s, mu, 0.0, make_vec({0.0}), 400, 9);
    std::vector<double> ends;
    for (const auto& tr : cloud) {
      ends.push_back(tr.x.back()(0));
      CHECK(std::abs(tr.x.back()(0)) <= apriori_bound(0.0, 1.0, 1.0, 0.0));
    }
    std::sort(ends.begin(), ends.end());
    CHECK(ends.front() == doctest::Approx(-1.0));
    CHECK(ends.back() == doctest::Approx(1.0));
    // endpoints land on the lattice -1 + 2j/40; the cloud leaves no wide gaps
    double widest = 0.0;
    for (std::size_t i = 1; i < ends.size(); ++i) widest = std::max(widest, ends[i] - ends[i - 1]);
    CHECK(widest <= 0.2 + 1e-12);
  }
}

TEST_CASE("a priori bound holds along characteristics") {
  auto s = fixtures::steering(3);
  s.drift = [](double, const Vec& x, const EmpiricalMeasure& m, const Vec& u) {
    return make_vec({0.5 * x(0) + 0.5 * m.mean()(0) * 0.0 + 0.5 * u(0)});
  };
  const auto mu = FlowOfProbabilities::constant(TimeGrid::uniform(1.0, 50),
                                                EmpiricalMeasure::uniform({make_vec({-2.0}), make_vec({2.0})}));
  const double bound = apriori_bound(1.5, 1.0, 1.0, sup_root_moment(mu));
  for (const auto& tr : reachable_cloud(s, mu, 0.0, make_vec({1.5}), 30, 3))
    for (const auto& x : tr.x) CHECK(x.norm() <= bound);
  CHECK(sup_root_moment(mu) == doctest::Approx(2.0));
}

TEST_CASE("piecewise control validation") {
  const auto grid = TimeGrid::uniform(1.0, 4);
  PiecewiseControl v{grid, {0, 1, 5, 0}};
  CHECK_THROWS_AS(v.validate(fixtures::line_controls(3)), ValidationError);
  v.values = {0, 1};
  CHECK_THROWS_AS(v.validate(fixtures::line_controls(3)), ValidationError);
}
