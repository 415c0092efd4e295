#pragma once

#include <cmath>
#include <numbers>

namespace bbmx {

/// log P(N > z) for a standard normal N, accurate far into both tails.
inline double log_normal_upper_tail(double z) {
  if (z < 30.0) {
    return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  }
  // Asymptotic expansion of the Mills ratio.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(z * std::sqrt(2.0 * std::numbers::pi)) +
         std::log(series);
}

/// Solves log P(N > z) = log_p for z; log_p must be negative.
inline double inverse_log_normal_upper_tail(double log_p) {
  // Newton on the log-tail; d/dz log Q(z) = -phi(z)/Q(z).
  double z = log_p < -0.7 ? std::sqrt(-2.0 * log_p) : 0.0;
  for (int i = 0; i < 100; ++i) {
    const double lq = log_normal_upper_tail(z);
    const double log_phi = -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
    const double slope = -std::exp(log_phi - lq);
    const double step = (lq - log_p) / slope;
    z -= step;
    if (std::abs(step) < 1e-12 * (1.0 + std::abs(z))) {
      break;
    }
  }
  return z;
}

} // namespace bbmx
