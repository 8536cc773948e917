#pragma once

#include <cmath>

#include "mfg/generator.hpp"

namespace fixtures {

using mfg::EmpiricalMeasure;
using mfg::Mat;
using mfg::Vec;

inline mfg::ControlSet line_controls(int count) {
  return mfg::ControlSet::grid(mfg::make_vec({-1.0}), mfg::make_vec({1.0}), {count});
}

/// 1-D f = u, g = 0, sigma = 0.
inline mfg::GeneratorSpec steering(int controls = 3) {
  mfg::GeneratorSpec s;
  s.dim = 1;
  s.controls = line_controls(controls);
  s.drift = [](double, const Vec&, const EmpiricalMeasure&, const Vec& u) { return Vec(u); };
  s.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return 0.0; };
  s.terminal_payoff = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
  return s;
}

/// Same dynamics with sigma(x) = -|x|: value -max(0, |x| - (T - s)).
inline mfg::GeneratorSpec steer_to_origin(int controls = 3) {
  auto s = steering(controls);
  s.terminal_payoff = [](const Vec& x, const EmpiricalMeasure&) { return -x.norm(); };
  return s;
}

inline double steer_to_origin_value(double s, double x, double horizon) {
  return -std::max(0.0, std::abs(x) - (horizon - s));
}

/// f = 0 with diffusion scale^2 I in `dim` dimensions, g = 0, sigma = <e1, x>.
inline mfg::GeneratorSpec brownian(int dim, double scale) {
  mfg::GeneratorSpec s;
  s.dim = dim;
  s.controls = mfg::ControlSet({mfg::zeros(dim)});
  s.drift = [dim](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return Vec(Vec::Zero(dim)); };
  s.diffusion = [dim, scale](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return Mat(scale * scale * Mat::Identity(dim, dim));
  };
  s.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return 0.0; };
  s.terminal_payoff = [](const Vec& x, const EmpiricalMeasure&) { return x(0); };
  return s;
}

/// One jump atom (rate, y) with the drift cancelling its mean if |y| > 1;
/// small jumps are compensated by the generator itself.
inline mfg::GeneratorSpec compensated_jump(double rate, double y) {
  mfg::GeneratorSpec s;
  s.dim = 1;
  s.controls = mfg::ControlSet({mfg::zeros(1)});
  const double f = std::abs(y) > 1.0 ? -rate * y : 0.0;
  s.drift = [f](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return mfg::make_vec({f}); };
  s.jumps.push_back([rate, y](double, const Vec&, const EmpiricalMeasure&, const Vec&) {
    return mfg::JumpAtom{rate, mfg::make_vec({y})};
  });
  s.running_payoff = [](double, const Vec&, const EmpiricalMeasure&, const Vec&) { return 0.0; };
  s.terminal_payoff = [](const Vec& x, const EmpiricalMeasure&) { return x(0); };
  return s;
}

}  // namespace fixtures
