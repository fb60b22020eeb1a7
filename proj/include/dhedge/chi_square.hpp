#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dhedge {

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
// Series for P when x < a + 1, modified Lentz continued fraction for Q
// otherwise.
inline double gamma_q(double a, double x) {
  if (!(a > 0.0)) throw std::domain_error("gamma_q: shape must be > 0");
  if (!(x >= 0.0)) throw std::domain_error("gamma_q: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr int max_iter = 100000;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, term = 1.0 / a, sum = term;
    for (int i = 0; i < max_iter; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return 1.0 - sum * std::exp(log_prefix);
  }
  constexpr double tiny = std::numeric_limits<double>::min() / eps;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < max_iter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_prefix) * h;
}

// Upper tail P(X >= statistic) for X ~ chi-square(df).
inline double chi_square_sf(double statistic, double df) {
  if (!(df > 0.0)) throw std::domain_error("chi_square_sf: df must be > 0");
  if (statistic <= 0.0) return 1.0;
  return gamma_q(df / 2.0, statistic / 2.0);
}

}  // namespace dhedge
