#ifndef SADDLEMAX_MLE_HPP
#define SADDLEMAX_MLE_HPP

#include <functional>

#include "saddlemax/likelihood.hpp"

namespace saddlemax {

// Per-coordinate closed box constraining the local search neighbourhood U.
struct Box {
  Vector lo, hi;

  static Box around(const Vector& center, double halfwidth);
  bool contains(const Vector& theta) const;
  Vector clamp(const Vector& theta) const;
};

struct MleFit {
  Vector theta_hat;
  ApproximationKind kind = ApproximationKind::Saddlepoint;
  double grad_norm = 0.0;
  Matrix hessian_theta;  // observed Hessian of the log-likelihood at theta_hat
  int iterations = 0;
  bool converged = false;
  bool near_singular_hessian = false;
  std::vector<std::pair<Vector, double>> trace;  // (theta, total) per iteration
};

struct MleOptions {
  double tol = 1e-10;          // convergence: ||grad||_inf <= tol * (1 + n)
  int max_iter = 100;
  QuadratureConfig quad;
};

// Local maximiser of the chosen approximate likelihood inside `box`, by
// damped Newton ascent on grad_log_likelihood. Convergence requires the
// gradient tolerance and a negative definite observed Hessian.
MleFit fit_mle(const CgfModel& model, const Observation& obs, ApproximationKind kind,
               const Vector& theta_init, const Box& box, const MleOptions& opt = MleOptions());

// Same ascent on the model's closed-form log density (the exact-likelihood
// oracle used by the experiment harness when available).
MleFit fit_mle_closed_form(const CgfModel& model, const Observation& obs,
                           const Vector& theta_init, const Box& box,
                           const MleOptions& opt = MleOptions());

// Fit two kinds from the same init/box and report the sup-norm gap.
struct MlePair {
  MleFit first, second;
  double gap = 0.0;
};
MlePair mle_error_pair(const CgfModel& model, const Observation& obs, ApproximationKind kind1,
                       ApproximationKind kind2, const Vector& theta_init, const Box& box,
                       const MleOptions& opt = MleOptions());

// Partition of theta into mean-moving (omega) and mean-invariant (nu) blocks.
struct ParameterSplit {
  std::vector<int> omega_indices;
  std::vector<int> nu_indices;
};

enum class IdentifiabilityMode { full, partial };

struct IdentifiabilityReport {
  IdentifiabilityMode mode = IdentifiabilityMode::full;
  Matrix A;  // K0''(s0;theta0)
  Matrix B;  // grad_s grad_theta K0(s0;theta0)
  Matrix H;  // grad^T grad K0 - B^T A^{-1} B
  bool H_negdef = false;
  // Partial mode:
  Matrix B_omega;
  Matrix J;
  Vector xi0_residuals;  // per nu_j: xi0^T J Q_j J xi0 - tr(A^{-1} Q_j)
  Matrix E;
  bool E_negdef = false;
  bool offdiag_ok = false;  // ||B_w^T A^{-1} Q_j J||_inf <= 1e-10 for all j
};

// Identifiability diagnostics at a base point (s0, theta0). Partial mode
// requires s0 = 0, the split, and B_omega of full column rank; xi0 is needed
// for the residuals and the curvature matrix E.
IdentifiabilityReport identifiability(const CgfModel& model, const RowVector& s0,
                                      const Vector& theta0,
                                      const std::optional<ParameterSplit>& split = std::nullopt,
                                      const std::optional<Vector>& xi0 = std::nullopt);

// Natural-parameter view of an exponential family whose sufficient statistic
// is X: K0(s;theta) = rho(eta(theta)+s) - rho(eta(theta)).
struct ExpFamilyAdapter {
  std::function<RowVector(const Vector&)> natural_param;
  std::function<std::optional<Vector>(const RowVector&)> theta_from_natural;  // optional
};

struct ExpFamilyMle {
  RowVector eta_hat;
  std::optional<Vector> theta_hat;
};

// eta_hat = eta(theta_probe) + s_hat(theta_probe; y), checked to be
// independent of the probe parameter (two probes must agree to 1e-9).
ExpFamilyMle expfamily_mle(const ExpFamilyAdapter& adapter, const CgfModel& model,
                           const Observation& obs, const Vector& probe1, const Vector& probe2);

}  // namespace saddlemax

#endif
