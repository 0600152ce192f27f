#ifndef SADDLEMAX_LIKELIHOOD_HPP
#define SADDLEMAX_LIKELIHOOD_HPP

#include "saddlemax/cgf.hpp"
#include "saddlemax/saddle.hpp"

namespace saddlemax {

// Which likelihood is being computed:
//   Exact       - L, via numerical inversion of the tilted MGF;
//   Saddlepoint - L_hat = L* . P_hat;
//   ZerothOrder - L*_hat, the P factor omitted entirely;
//   NormalApprox- likelihood of N(K'(0;theta), K''(0;theta)).
enum class ApproximationKind { Exact, Saddlepoint, ZerothOrder, NormalApprox };

const char* kind_name(ApproximationKind k);
ApproximationKind kind_from_name(const std::string& name);

// Observation x of X = sum of n i.i.d. summands; y = x/n is the implied
// sample mean. n is a convolution count, not a sample size.
struct Observation {
  Vector x;
  double n = 1.0;
  Vector y;

  Observation() = default;
  Observation(Vector x_, double n_) : x(std::move(x_)), n(n_), y(x / n_) {}
  static Observation from_mean(Vector y_, double n_) {
    Observation o;
    o.y = std::move(y_);
    o.n = n_;
    o.x = o.y * n_;
    return o;
  }
};

enum class QuadratureScheme { trapezoid_periodic, tanh_sinh, plain_trapezoid };

struct QuadratureConfig {
  int nodes_per_dim = 201;  // forced odd so phi = 0 is a node
  // Box radius in units of per-axis standard deviations of the tilted
  // Gaussian: radius = multiplier * max_j sqrt((K0''(s)^{-1})_{jj} / n).
  double truncation_radius_multiplier = 12.0;
  QuadratureScheme scheme = QuadratureScheme::plain_trapezoid;
  int lattice_nodes_per_dim = 256;
  // > 1 extends the box to tail_extension * radius at the same node spacing
  // and tapers the integrand smoothly to zero over the extension. Off by
  // default; needed for heavy-tailed integrands (small n * alpha Gamma-type
  // models) where the strict decay test would fail.
  double tail_extension = 1.0;
};

struct FactoredLogLikelihood {
  double log_lstar = 0.0;  // n * log L*_0(s_hat, theta)
  double log_p = 0.0;      // log of the P factor for this kind (0 for ZerothOrder)
  double total = 0.0;      // log_lstar + log_p
  ApproximationKind kind = ApproximationKind::Saddlepoint;
  std::optional<SaddleResult> saddle;
};

// log L*_0(s,theta) = K0(s;theta) - s K0'(s;theta).
double log_lstar0(const CgfModel& model, const Vector& theta, const RowVector& s);

// The P factor: density of the tilted distribution at its mean.
// Continuous models integrate over a truncated box (m <= 2); integer-lattice
// models integrate over [-pi,pi]^m with the periodic trapezoid rule.
double exact_p_factor(const CgfModel& model, const Vector& theta, const RowVector& s,
                      double n, const QuadratureConfig& quad = QuadratureConfig());

// P together with its partial derivatives in theta and s, computed by
// differentiating under the integral sign. Requires complex theta-gradients.
struct PIntegrals {
  double p = 0.0;
  RowVector dp_dtheta;  // 1 x p
  RowVector dp_ds;      // 1 x m
};
PIntegrals exact_p_with_grad(const CgfModel& model, const Vector& theta, const RowVector& s,
                             double n, const QuadratureConfig& quad = QuadratureConfig());

FactoredLogLikelihood log_likelihood(const CgfModel& model, const Vector& theta,
                                     const Observation& obs, ApproximationKind kind,
                                     const QuadratureConfig& quad = QuadratureConfig());

RowVector grad_log_likelihood(const CgfModel& model, const Vector& theta,
                              const Observation& obs, ApproximationKind kind,
                              const QuadratureConfig& quad = QuadratureConfig());

// -0.5 * log det(2*pi*n*A) through a Cholesky factorization.
double neg_half_logdet_2pin(const Matrix& A, double n);

}  // namespace saddlemax

#endif
