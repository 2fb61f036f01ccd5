#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

#include "pfvb/rng.hpp"

namespace pfvb {

/// Truncation region of a latent utility: (0, inf) for y = 1, (-inf, 0) for y = 0.
enum class Side { Positive, Negative };

inline constexpr double side_sign(Side side) noexcept {
  return side == Side::Positive ? 1.0 : -1.0;
}

inline constexpr Side side_from_label(double y) noexcept {
  return y > 0.5 ? Side::Positive : Side::Negative;
}

template <std::floating_point T>
T norm_pdf(T x) {
  return std::exp(-x * x / 2) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
}

template <std::floating_point T>
T norm_cdf(T x) {
  return std::erfc(-x / std::numbers::sqrt2_v<T>) / 2;
}

namespace detail {

// Below this argument the Mills ratio is evaluated from the continued
// fraction instead of pdf / cdf.
inline constexpr double kTailSwitch = -5.0;

// x + j/(x + (j+1)/(x + (j+2)/(x + ...))) for x > 0 by modified Lentz.
// With j = 1 this is phi(x) / (1 - Phi(x)).
template <std::floating_point T>
T tail_fraction(T x, int j) {
  constexpr T eps = std::numeric_limits<T>::epsilon();
  constexpr T tiny = std::numeric_limits<T>::min() * 1024;
  T f = x;
  T c = x;
  T d = 0;
  for (int k = j; k < j + 10000; ++k) {
    d = x + k * d;
    if (d == 0) d = tiny;
    d = 1 / d;
    c = x + k / c;
    if (c == 0) c = tiny;
    const T delta = c * d;
    f *= delta;
    if (std::abs(delta - 1) <= eps) break;
  }
  return f;
}

// (1 - Phi(x)) / phi(x) for x > 0.
template <std::floating_point T>
T upper_tail_ratio(T x) {
  return 1 / tail_fraction(x, 1);
}

}  // namespace detail

/// Inverse Mills ratio phi(t) / Phi(t).
///
/// Left tail goes through a continued fraction so nothing underflows before the
/// division. The double instantiation is exact to ~1e-15 relative wherever the
/// result is a normal double (t below about 37.5); past that the true value is
/// smaller than the double range and the result degrades to subnormal, then 0.
/// Instantiate with long double for the far right tail.
template <std::floating_point T>
T mills_ratio(T t) {
  if (t < static_cast<T>(detail::kTailSwitch)) return detail::tail_fraction(-t, 1);
  return norm_pdf(t) / norm_cdf(t);
}

/// t + phi(t) / Phi(t), the standardized mean of N(t, 1) truncated to (0, inf).
/// The left tail reads it off the continued fraction to avoid cancellation.
template <std::floating_point T>
T mills_shift(T t) {
  if (t < static_cast<T>(detail::kTailSwitch)) return 1 / detail::tail_fraction(-t, 2);
  return t + mills_ratio(t);
}

/// log Phi(x), finite for every finite x.
template <std::floating_point T>
T log_norm_cdf(T x) {
  if (x < static_cast<T>(detail::kTailSwitch)) {
    return -x * x / 2 - std::log(std::numbers::sqrt2_v<T> / std::numbers::inv_sqrtpi_v<T>) +
           std::log(detail::upper_tail_ratio(-x));
  }
  if (x > 5) return std::log1p(-norm_cdf(-x));
  return std::log(norm_cdf(x));
}

/// Standard normal quantile.
inline double norm_quantile(double q) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2 * q);
}

/// Univariate normal N(mu, sigma^2) truncated to one side of zero.
struct TruncNormParams {
  double mu = 0.0;
  double sigma = 1.0;
  Side side = Side::Positive;

  // mu / sigma signed so the truncation region is always (0, inf).
  double standardized() const noexcept { return side_sign(side) * mu / sigma; }
};

inline double tn_mean(const TruncNormParams& prm) {
  return side_sign(prm.side) * prm.sigma * mills_shift(prm.standardized());
}

inline double tn_var(const TruncNormParams& prm) {
  const double t = prm.standardized();
  return prm.sigma * prm.sigma * (1.0 - mills_ratio(t) * mills_shift(t));
}

inline double tn_second_moment(const TruncNormParams& prm) {
  const double m = tn_mean(prm);
  return tn_var(prm) + m * m;
}

/// Draw from TN(0, 1) restricted to [lower, inf).
///
/// Exponential-proposal rejection (optimal rate) when the bound sits above the
/// mode, inverse CDF on the reflected upper-truncated normal otherwise.
inline double std_tn_lower_sample(double lower, Rng& rng) {
  if (lower > 0.0) {
    const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
    for (;;) {
      const double u = lower + rng.exponential() / rate;
      const double dev = u - rate;
      if (rng.uniform() <= std::exp(-0.5 * dev * dev)) return u;
    }
  }
  const double upper_mass = norm_cdf(-lower);
  return -norm_quantile(rng.uniform() * upper_mass);
}

inline double tn_sample(const TruncNormParams& prm, Rng& rng) {
  const double s = side_sign(prm.side);
  const double lower = -prm.standardized();
  for (;;) {
    const double z = prm.mu + s * prm.sigma * std_tn_lower_sample(lower, rng);
    if (s * z > 0.0) return z;
  }
}

}  // namespace pfvb
