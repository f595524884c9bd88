#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "covsteer/matrix_utils.hpp"

namespace covsteer {

namespace detail {

/// Regularized lower incomplete gamma P(a, x) by series expansion.
/// Valid for x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

/// Regularized upper incomplete gamma Q(a, x) by modified Lentz continued
/// fraction. Valid for x >= a + 1.
inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double frac = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    frac *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return frac * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_p(double a, double x) {
  if (x < 0.0) throw Error("gamma_p: negative argument");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_contfrac(a, x);
}

/// Acklam's rational approximation of the standard normal quantile,
/// used only to seed the bisection bracket.
inline double norm_quantile_seed(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// CDF of the chi-square distribution with `dof` degrees of freedom.
inline double chi2_cdf(int dof, double x) {
  if (dof < 1) throw Error("chi2_cdf: dof must be >= 1");
  if (x < 0.0) throw Error("chi2_cdf: negative argument");
  return detail::gamma_p(0.5 * dof, 0.5 * x);
}

/// p-quantile of the chi-square distribution, by bisection on chi2_cdf
/// seeded with the Wilson-Hilferty approximation.
inline double chi2_quantile(int dof, double p) {
  if (dof < 1) throw Error("chi2_quantile: dof must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw Error("chi2_quantile: p must be in (0,1)");

  const double z = detail::norm_quantile_seed(p);
  const double k = static_cast<double>(dof);
  const double wh = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  double seed = k * wh * wh * wh;
  if (!(seed > 0.0) || !std::isfinite(seed)) seed = k;

  double lo = 0.0;
  double hi = std::max(seed * 2.0, 1.0);
  for (int i = 0; i < 200 && chi2_cdf(dof, hi) < p; ++i) hi *= 2.0;

  // Bisect to the floating-point limit: an absolute stop would leave the
  // round trip short of full precision in the dof=1 left tail, where the
  // density is unbounded.
  while (hi - lo > 1e-15 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (chi2_cdf(dof, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Bound rho on the largest eigenvalue of the input covariance implied by
/// P(||u||_2 <= u_max) >= 1 - gamma, for inputs of dimension m:
/// rho = u_max^2 / Q_chi2_m(1 - gamma).
inline double chance_bound_rho(double u_max, double gamma, int m) {
  if (!(u_max > 0.0)) throw Error("chance_bound_rho: u_max must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw Error("chance_bound_rho: gamma must be in (0,1)");
  if (m < 1) throw Error("chance_bound_rho: m must be >= 1");
  return u_max * u_max / chi2_quantile(m, 1.0 - gamma);
}

}  // namespace covsteer
