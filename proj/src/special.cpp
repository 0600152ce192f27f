#include "saddlemax/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace saddlemax {

double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: x must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // psi(x) ~ ln x - 1/(2x) - sum B_{2k}/(2k x^{2k})
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = inv2 * (1.0 / 12.0 +
                  inv2 * (-1.0 / 120.0 +
                  inv2 * (1.0 / 252.0 +
                  inv2 * (-1.0 / 240.0 +
                  inv2 * (1.0 / 132.0 +
                  inv2 * (-691.0 / 32760.0))))));
  return result + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: x must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // psi'(x) ~ 1/x + 1/(2x^2) + sum B_{2k}/x^{2k+1}
  double series = inv * (1.0 +
                  inv * (0.5 +
                  inv * (1.0 / 6.0 +
                  inv2 * (-1.0 / 30.0 +
                  inv2 * (1.0 / 42.0 +
                  inv2 * (-1.0 / 30.0 +
                  inv2 * (5.0 / 66.0)))))));
  return result + series;
}

double inverse_digamma(double target) {
  // Initial guess from psi(z) ~ ln(z - 1/2) for moderate z, psi(z) ~ -1/z near 0.
  double z = target >= -2.22 ? std::exp(target) + 0.5 : -1.0 / (target + 0.5772156649015329);
  if (!(z > 0.0)) z = 1e-8;
  for (int it = 0; it < 100; ++it) {
    const double f = digamma(z) - target;
    double step = f / trigamma(z);
    double znew = z - step;
    while (!(znew > 0.0)) {
      step *= 0.5;
      znew = z - step;
    }
    z = znew;
    if (std::abs(f) < 1e-14 * (1.0 + std::abs(target))) break;
  }
  return z;
}

double log_sum_exp(const double* v, int len) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < len; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (int i = 0; i < len; ++i) acc += std::exp(v[i] - m);
  return m + std::log(acc);
}

}  // namespace saddlemax
