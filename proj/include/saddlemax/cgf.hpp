#ifndef SADDLEMAX_CGF_HPP
#define SADDLEMAX_CGF_HPP

#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "saddlemax/types.hpp"

namespace saddlemax {

enum class SupportKind { continuous, integer_lattice };

// Dimensions of the model: observation X in R^m, parameter theta in R^p.
struct ModelSignature {
  int m = 1;
  int p = 1;
  SupportKind support = SupportKind::continuous;
};

// Derivative blocks of K0 that evaluate() can request. The first six follow
// the standard c.g.f. bookkeeping; the last three are higher-order blocks
// used by likelihood gradients and identifiability diagnostics.
namespace block {
constexpr unsigned value = 1u << 0;         // K0(s;theta)
constexpr unsigned grad_s = 1u << 1;        // K0' (m x 1)
constexpr unsigned hess_s = 1u << 2;        // K0'' (m x m, SPD on the interior)
constexpr unsigned grad_theta = 1u << 3;    // (1 x p)
constexpr unsigned cross = 1u << 4;         // grad_s grad_theta K0 (m x p)
constexpr unsigned hess_theta = 1u << 5;    // (p x p)
constexpr unsigned dhess_dtheta = 1u << 6;  // p matrices dK0''/dtheta_j
constexpr unsigned dhess_ds = 1u << 7;      // m matrices dK0''/ds_i
constexpr unsigned d2hess_dtheta2 = 1u << 8;  // p*p matrices d2K0''/dtheta_i dtheta_j
constexpr unsigned all_first_order = value | grad_s | hess_s | grad_theta | cross;
}  // namespace block

struct CgfEvaluation {
  double k0 = 0.0;
  Vector grad_s;
  Matrix hess_s;
  RowVector grad_theta;
  Matrix cross;
  Matrix hess_theta;
  std::vector<Matrix> dhess_dtheta;
  std::vector<Matrix> dhess_ds;
  std::vector<std::vector<Matrix>> d2hess_dtheta2;
  unsigned present = 0;   // blocks populated
  unsigned fd_blocks = 0; // subset of `present` filled by finite differences

  bool has(unsigned b) const { return (present & b) == b; }
};

// Complex evaluation at z = s + i*phi, used by the inversion quadrature.
// k0 is populated only when the model can supply a branch-correct value of
// K0(z); m0 and the logarithmic derivatives grad_s = M0'/M0 and
// grad_theta = (d/dtheta M0)/M0 are single-valued and always well defined
// away from zeros of M0.
struct ComplexCgf {
  Complex k0{0.0, 0.0};
  Complex m0{0.0, 0.0};
  ComplexVector grad_s;
  ComplexRowVector grad_theta;
  bool has_k0 = false;
  bool has_grad_theta = false;
};

struct Capabilities {
  bool has_analytic_theta_derivs = false;
  bool has_complex_mgf = false;
  bool has_second_nu_derivs = false;
  bool has_closed_form_likelihood = false;
  // Finer-grained flags:
  bool has_branch_free_complex_k0 = false;  // complex K0 is branch-correct on the domain
  bool has_complex_theta_grad = false;      // complex grad_theta available
  bool has_third_s_derivs = false;          // dhess_ds analytic
  bool has_sampler = false;
};

// The model contract: K0 and its derivatives, domain bookkeeping, and the
// optional complex extension. Implementations must be immutable after
// construction; every member function here is const and thread-safe.
//
// Contract highlights:
//   - K0(0;theta) = 0 for all theta in the domain;
//   - hess_s is symmetric positive definite on the interior of S_theta;
//   - |M0(s+i phi)| <= M0(s) for all phi.
class CgfModel {
 public:
  virtual ~CgfModel() = default;

  virtual const ModelSignature& signature() const = 0;
  virtual bool theta_in_domain(const Vector& theta) const = 0;
  virtual bool in_domain(const RowVector& s, const Vector& theta) const = 0;
  virtual Capabilities capabilities() const = 0;

  // Fill whatever requested blocks the model supports analytically.
  // Called only on points that passed in_domain.
  virtual void eval_analytic(const RowVector& s, const Vector& theta,
                             unsigned request, CgfEvaluation& out) const = 0;

  virtual ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                                  const Vector& theta) const;

  // Exact log-likelihood of observing x = sum of n i.i.d. summands.
  virtual std::optional<double> closed_form_log_density(const Vector& theta,
                                                        const Vector& x,
                                                        double n) const;

  // Analytic theta-gradient of the closed-form log density, when available.
  virtual std::optional<RowVector> closed_form_grad_log_density(
      const Vector& theta, const Vector& x, double n) const;

  // Starting point for the saddlepoint solver; must be interior.
  virtual RowVector initial_dual_point(const Vector& theta) const;

  // Optional per-coordinate open box {lo, hi} containing S_theta, used by the
  // solver to clamp line searches. Entries may be +-inf.
  virtual std::optional<std::pair<RowVector, RowVector>> dual_box_hint(
      const Vector& theta) const;

  // Draw one realisation of X = sum of n i.i.d. summands.
  virtual Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const;
};

using ModelPtr = std::shared_ptr<const CgfModel>;

struct FdConfig {
  double step_abs = 1e-6;
  double step_rel = 1e-6;
  // Step for second differences taken directly on K0 values.
  double step2_abs = 2e-4;
  bool enabled = true;

  double step(double coord) const;
  double step2(double coord) const;
};

// Evaluate the requested blocks, preferring analytic values and filling the
// remainder with central finite differences of the lowest available analytic
// block. FD-filled blocks are flagged in CgfEvaluation::fd_blocks. Throws
// DomainError off the domain and NotSupportedError if FD fill is disabled
// and an analytic block is missing.
CgfEvaluation evaluate(const CgfModel& model, const RowVector& s, const Vector& theta,
                       unsigned request, const FdConfig& fd = FdConfig());

// Pure central-difference estimate of one derivative block, built only from
// K0 values and (for third-order blocks) analytic Hessians. Used to validate
// analytic blocks. `which` must name a single block.
CgfEvaluation fd_derivative_oracle(const CgfModel& model, const RowVector& s,
                                   const Vector& theta, unsigned which, double step);

// Convenience: M0(s + i*phi) and K0'(s + i*phi) = M0'/M0.
std::pair<Complex, ComplexVector> eval_complex_mgf(const CgfModel& model,
                                                   const RowVector& s,
                                                   const RowVector& phi,
                                                   const Vector& theta);

}  // namespace saddlemax

#endif
