#ifndef SADDLEMAX_MODELS_HPP
#define SADDLEMAX_MODELS_HPP

#include <functional>
#include <map>
#include <string>

#include "saddlemax/cgf.hpp"

namespace saddlemax {
namespace models {

// Poisson(theta) summands; theta > 0, integer lattice support.
ModelPtr poisson();

enum class GammaVariant { free_alpha_r, fi, pi };

// Gamma summands. free_alpha_r: theta = (alpha, r). fi: alpha = theta, r = 1.
// pi: alpha = r = theta (unit mean for every theta).
ModelPtr gamma_model(GammaVariant variant);

// Multivariate normal summands N(mu(theta), Sigma(theta)). The affine factory
// uses mu(theta) = M theta + c with constant SPD Sigma and carries analytic
// theta-derivatives throughout.
ModelPtr normal_affine(const Matrix& M, const Vector& c, const Matrix& Sigma);

// General smooth parametrisations; theta-derivatives fall back to finite
// differences unless jacobians are supplied.
struct NormalMaps {
  std::function<Vector(const Vector&)> mean;
  std::function<Matrix(const Vector&)> cov;
  std::function<Matrix(const Vector&)> mean_jac;                // optional, m x p
  std::function<std::vector<Matrix>(const Vector&)> cov_jac;    // optional, p entries
  std::function<bool(const Vector&)> theta_domain;              // optional
  int m = 0;
  int p = 0;
};
ModelPtr normal_general(NormalMaps maps);

// Bivariate statistic (Z, Z^2) of Z ~ N(mu, sigma2); theta = (mu, sigma2).
ModelPtr normal_with_square();

// Birth-death process observed over an interval of length t, summand = the
// population descended from one individual; theta = (omega, nu) =
// (lambda - mu, lambda + mu), domain -nu < omega < nu. Integer lattice.
ModelPtr birth_death(double t);

// (alpha, q) of the modified Geometric transition law, with the removable
// singularity at omega = 0 handled by a series branch.
std::pair<double, double> birthdeath_alpha_q(double omega, double nu, double t);

// Mixture failure-mode example: Y = 0.5 exp(-theta^2) Z + B, B = +-1.
ModelPtr mixture_normal();

// X = A U + b per summand, A of full row rank m (checked; RankDeficientError).
ModelPtr compose_linear(const Matrix& A, ModelPtr latent, const Vector& shift = Vector());

// Concatenation of k independent sub-blocks of `base`, block j scaled by
// beta_j > 0: K0(s) = sum_j beta_j K0_base(s_j).
ModelPtr compose_concat(ModelPtr base, const Vector& beta);

// Exact log-likelihood oracle; nullopt when the model has no closed form.
std::optional<double> closed_form_log_density(const CgfModel& model, const Vector& theta,
                                              const Vector& x, double n);

// Build a model from a string id and a flat parameter table. Returns the
// model and the theta vector implied by the table. A "k" entry wraps the
// base model in a k-block concatenation with unit beta.
std::pair<ModelPtr, Vector> make_model(const std::string& id,
                                       const std::map<std::string, double>& params);

}  // namespace models
}  // namespace saddlemax

#endif
