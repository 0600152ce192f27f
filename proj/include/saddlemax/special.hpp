#ifndef SADDLEMAX_SPECIAL_HPP
#define SADDLEMAX_SPECIAL_HPP

namespace saddlemax {

// Digamma function psi(x) = d/dx log Gamma(x), x > 0.
// Recurrence shift to x >= 10 followed by the asymptotic Bernoulli series;
// relative accuracy better than 1e-13 on (0, inf).
double digamma(double x);

// Trigamma function psi'(x), x > 0. Same scheme as digamma.
double trigamma(double x);

// Solve psi(z) = target for z > 0 (psi is increasing on (0, inf)).
double inverse_digamma(double target);

// Numerically stable log(sum(exp(v))) over a raw array.
double log_sum_exp(const double* v, int len);

}  // namespace saddlemax

#endif
