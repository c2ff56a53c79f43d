#pragma once

// Scalar special functions on doubles. Log-space throughout so tail masses
// and mixtures never underflow before they are combined.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include <boost/math/special_functions/erf.hpp>

#include "genhai/error.hpp"

namespace genhai {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ln sqrt(2 pi)

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) {
  return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

/// ln Γ(x) for x > 0. Uses the reentrant variant so concurrent callers do
/// not race on the global `signgam`.
inline double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

inline double log_sum_exp(std::span<const double> a) {
  if (a.empty()) return kNegInf;
  const double m = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == kNegInf) return kNegInf;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// log(1 - e^a) for a <= 0.
inline double log1m_exp(double a) {
  if (a > 0.0) return std::numeric_limits<double>::quiet_NaN();
  return a > -std::numbers::ln2 ? std::log(-std::expm1(a)) : std::log1p(-std::exp(a));
}

inline double normal_log_pdf_std(double z) { return -0.5 * z * z - kHalfLog2Pi; }

/// log P(Z > z) for a standard normal Z, accurate deep into the upper tail.
inline double normal_log_sf(double z) {
  if (z < 37.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  // Asymptotic series of the Mills ratio; relative error < 1e-10 here.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return normal_log_pdf_std(z) - std::log(z) + std::log(series);
}

/// log P(Z <= z).
inline double normal_log_cdf(double z) { return normal_log_sf(-z); }

/// Inverse of normal_log_sf: the z with log P(Z > z) = log_q.
inline double normal_sf_inverse_log(double log_q) {
  if (!(log_q <= 0.0)) throw DomainError("normal_sf_inverse_log: log_q must be <= 0");
  if (log_q > -700.0) {
    const double q2 = 2.0 * std::exp(log_q);
    if (q2 >= 2.0) return -std::numeric_limits<double>::infinity();
    return std::numbers::sqrt2 * boost::math::erfc_inv(q2);
  }
  // Newton on the log tail; the derivative is -phi(z)/Q(z).
  double z = std::sqrt(-2.0 * log_q);
  for (int i = 0; i < 60; ++i) {
    const double f = normal_log_sf(z) - log_q;
    const double slope = -std::exp(normal_log_pdf_std(z) - normal_log_sf(z));
    const double step = f / slope;
    z -= step;
    if (std::abs(step) < 1e-14 * std::max(1.0, std::abs(z))) break;
  }
  return z;
}

inline double affine(std::span<const double> w, double c, std::span<const double> x) {
  double v = c;
  for (std::size_t i = 0; i < w.size(); ++i) v += w[i] * x[i];
  return v;
}

inline double sum(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s;
}

inline double square(double x) { return x * x; }

}  // namespace genhai
