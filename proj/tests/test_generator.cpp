#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "mfg/generator.hpp"

using namespace mfg;

namespace {

const EmpiricalMeasure& origin1() {
  static const auto m = EmpiricalMeasure::dirac(make_vec({0.0}));
  return m;
}

GeneratorSpec with_noise(double s2, std::vector<JumpAtom> atoms, int dim = 1) {
  GeneratorSpec g;
  g.dim = dim;
  g.controls = ControlSet({zeros(dim)});
  g.drift = [dim](double, const Vec& x, const EmpiricalMeasure&, const Vec&) {
    Vec f(dim);
    for (int k = 0; k < dim; ++k) f(k) = 0.5 * x(k) - 0.25 * k;
    return f;
  };
  if (s2 > 0.0)
    g.diffusion = [s2, dim](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
      return Mat(s2 * Mat::Identity(dim, dim));
    };
  for (const auto& a : atoms)
    g.jumps.push_back([a](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return a; });
  g.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return 0.0; };
  g.terminal_payoff = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  return g;
}

}  // namespace

TEST_CASE("total noise is the trace plus the jump second moment") {
  const Vec x = make_vec({0.3, -0.2});
  const Vec u = zeros(2);
  const auto m = EmpiricalMeasure::dirac(zeros(2));
  CHECK(total_noise(with_noise(0.25, {}, 2), 0.0, x, m, u) == doctest::Approx(0.5));
  const JumpAtom atom{2.0, make_vec({0.3, 0.4})};
  CHECK(total_noise(with_noise(0.0, {atom}, 2), 0.0, x, m, u) == doctest::Approx(0.5));
  CHECK(total_noise(with_noise(0.25, {atom}, 2), 0.0, x, m, u) == doctest::Approx(1.0));
}

TEST_CASE("effective drift counts only jumps leaving the unit ball") {
  const Vec x = make_vec({1.0});
  const Vec u = zeros(1);
  const double f = 0.5;
  CHECK(effective_drift(with_noise(0.0, {}), 0.0, x, origin1(), u)(0) == doctest::Approx(f));
  CHECK(effective_drift(with_noise(0.0, {{3.0, make_vec({0.9})}}), 0.0, x, origin1(), u)(0) ==
        doctest::Approx(f));
  CHECK(effective_drift(with_noise(0.0, {{3.0, make_vec({2.0})}}), 0.0, x, origin1(), u)(0) ==
        doctest::Approx(f + 6.0));
  // linear in the atom list
  const auto both = with_noise(0.0, {{3.0, make_vec({2.0})}, {1.0, make_vec({-4.0})}});
  CHECK(effective_drift(both, 0.0, x, origin1(), u)(0) == doctest::Approx(f + 6.0 - 4.0));
}

TEST_CASE("generator on the closed test family") {
  const Vec u = zeros(1);
  SUBCASE("deterministic linear") {
    auto s = fixtures::steering(3);
    const Vec xi = make_vec({2.5});
    CHECK(apply_generator(s, LinearTest{xi}, 0.0, make_vec({0.7}), origin1(), make_vec({-1.0})) ==
          doctest::Approx(-2.5));
  }
  SUBCASE("quadratic at the coupling diagonal is the total noise") {
    const auto s = with_noise(0.36, {}, 2);
    const Vec x = make_vec({0.1, 0.2});
    CHECK(apply_generator(s, CouplingQuadraticTest{x}, 0.0, x, EmpiricalMeasure::dirac(zeros(2)),
                          zeros(2)) == doctest::Approx(0.72));
  }
  SUBCASE("coupling linear with one large atom") {
    auto s = with_noise(0.0, {{1.5, make_vec({3.0})}});
    s.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return zeros(1); };
    CHECK(apply_generator(s, CouplingLinearTest{make_vec({0.4}), make_vec({1.0})}, 0.0,
                          make_vec({-0.3}), origin1(), u) == doctest::Approx(4.5));
  }
}

TEST_CASE("generator identities on random inputs") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> un(-2.0, 2.0);
  std::uniform_real_distribution<double> pos(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec y1 = make_vec({un(rng), un(rng)});
    const Vec y2 = make_vec({0.2 * un(rng), 0.2 * un(rng)});
    const auto spec = with_noise(pos(rng), {{pos(rng), y1}, {pos(rng), y2}}, 2);
    const auto det = spec.deterministic_part();
    const Vec x1 = make_vec({un(rng), un(rng)}), x2 = make_vec({un(rng), un(rng)}),
              x3 = make_vec({un(rng), un(rng)});
    const auto m = EmpiricalMeasure::uniform({x2, x3});
    const Vec u = zeros(2);
    const double sigma = total_noise(spec, 0.0, x1, m, u);
    const Vec b = effective_drift(spec, 0.0, x1, m, u);
    const Vec f = spec.drift(0.0, x1, m, u);

    const double q = apply_generator(spec, CouplingQuadraticTest{x2}, 0.0, x1, m, u);
    CHECK(q == doctest::Approx(sigma + 2.0 * b.dot(x1 - x2)).epsilon(1e-12));
    const double l = apply_generator(spec, CouplingLinearTest{x2, x3}, 0.0, x1, m, u);
    CHECK(l == doctest::Approx(b.dot(x3)).epsilon(1e-12));
    const double ld = apply_generator(det, CouplingLinearTest{x2, x3}, 0.0, x1, m, u);
    CHECK(ld == doctest::Approx(f.dot(x3)).epsilon(1e-12));
    const double qd = apply_generator(det, CouplingQuadraticTest{x2}, 0.0, x1, m, u);
    CHECK(q - qd == doctest::Approx(sigma + 2.0 * (b - f).dot(x1 - x2)).epsilon(1e-12));
  }
}

TEST_CASE("epsilon for a vanishing Brownian family") {
  auto limit = fixtures::steering(3);
  std::vector<GeneratorSpec> family;
  for (double n : {1.0, 2.0, 4.0, 8.0}) {
    auto s = limit;
    s.diffusion = [n](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
      return Mat(Mat::Identity(1, 1) / n);
    };
    family.push_back(s);
  }
  const auto sample = make_sample(limit, 2.0, 9, {origin1()}, {0.0, 1.0});
  const auto eps = epsilon_estimate(family, limit, sample);
  REQUIRE(eps.size() == 4);
  CHECK(eps[0] == doctest::Approx(1.0));
  CHECK(eps[1] == doctest::Approx(0.5));
  CHECK(eps[3] == doctest::Approx(0.125));
  for (std::size_t i = 1; i < eps.size(); ++i) CHECK(eps[i] <= eps[i - 1]);
  CHECK(epsilon_estimate({limit, limit}, limit, sample) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(epsilon_estimate(family, limit, {}), ValidationError);
}

TEST_CASE("epsilon for a small-jump family") {
  auto limit = fixtures::steering(3);
  const double y0 = 0.8;
  std::vector<GeneratorSpec> family;
  for (double n : {2.0, 4.0}) {
    auto s = limit;
    s.jumps.push_back([n, y0](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
      return JumpAtom{n, make_vec({y0 / n})};
    });
    family.push_back(s);
  }
  const auto sample = make_sample(limit, 1.0, 5, {origin1()}, {0.0});
  const auto eps = epsilon_estimate(family, limit, sample);
  CHECK(eps[0] == doctest::Approx(y0 * y0 / 2.0));
  CHECK(eps[1] == doctest::Approx(y0 * y0 / 4.0));
}

TEST_CASE("growth audit") {
  auto s = fixtures::steering(3);
  const auto sample = make_sample(s, 3.0, 7, {origin1()}, {0.0});
  CHECK(audit_growth(s, 1.0, sample).passed);
  s.drift = [](double, const Vec& x, const EmpiricalMeasure&, const Vec&) { return Vec(x.cwiseAbs2()); };
  const auto bad = audit_growth(s, 1.0, sample);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_drift_ratio > 1.0);
}

TEST_CASE("diffusion factor") {
  Mat g(2, 2);
  g << 2.0, 0.5, 0.5, 1.0;
  const Mat f = diffusion_factor(g);
  CHECK((f * f.transpose() - g).norm() < 1e-12);
  CHECK((diffusion_factor(Mat::Zero(2, 2))).norm() == 0.0);
  Mat bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(diffusion_factor(bad), NumericalError);
}

TEST_CASE("control set") {
  const auto c = fixtures::line_controls(21);
  CHECK(c.size() == 21);
  CHECK(c[0](0) == doctest::Approx(-1.0));
  CHECK(c[20](0) == doctest::Approx(1.0));
  CHECK(c[c.smallest()](0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(ControlSet({make_vec({1.0}), make_vec({1.0})}), ValidationError);
  CHECK_THROWS_AS(ControlSet(std::vector<Vec>{}), ValidationError);
}
