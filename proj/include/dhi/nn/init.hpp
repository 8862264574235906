#pragma once

#include "dhi/nn/parameter.hpp"
#include "dhi/random.hpp"

#include <cmath>

namespace dhi::nn {

/// Gain for a (leaky) rectifier with the given negative slope.
inline double rectifier_gain(double negative_slope) {
  return std::sqrt(2.0 / (1.0 + negative_slope * negative_slope));
}

/// Kaiming-style uniform fan-in init: U(-b, b), b = gain * sqrt(3 / fan_in).
template <typename Scalar>
void kaiming_uniform(Parameter<Scalar>& p, Index fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < p.size(); ++i) p.values[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

/// Bias init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
void bias_uniform(Parameter<Scalar>& p, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < p.size(); ++i) p.values[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

}  // namespace dhi::nn
