#include "saddlemax/saddle.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace saddlemax {

namespace {

double residual_norm_inf(const Vector& r) { return r.lpNorm<Eigen::Infinity>(); }

Matrix spd_inverse(const Matrix& A, const char* what) {
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) {
    throw SingularHessianError(std::string(what) + ": Cholesky factorization failed");
  }
  // Condition check via extreme eigenvalues of the SPD matrix.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e14) {
    throw SingularHessianError(std::string(what) + ": K0'' numerically singular");
  }
  Matrix inv = llt.solve(Matrix::Identity(A.rows(), A.cols()));
  return 0.5 * (inv + inv.transpose());
}

}  // namespace

SaddleResult solve_saddlepoint(const CgfModel& model, const Vector& theta, const Vector& y,
                               const SolverConfig& cfg) {
  if (!model.theta_in_domain(theta)) throw DomainError("solve_saddlepoint: invalid theta");
  const int m = model.signature().m;
  if (y.size() != m) throw DomainError("solve_saddlepoint: y has wrong dimension");

  RowVector s = cfg.init ? *cfg.init : model.initial_dual_point(theta);
  if (!model.in_domain(s, theta)) {
    throw DomainError("solve_saddlepoint: initial point outside domain");
  }

  const double scale = 1.0 + y.lpNorm<Eigen::Infinity>();
  const double tol = cfg.tol * scale;
  const auto box = model.dual_box_hint(theta);

  auto in_domain = [&](const RowVector& sv) {
    if (box) {
      for (int i = 0; i < m; ++i) {
        if (!(sv[i] > box->first[i] && sv[i] < box->second[i])) return false;
      }
    }
    return model.in_domain(sv, theta);
  };

  CgfEvaluation ev = evaluate(model, s, theta, block::grad_s | block::hess_s);
  Vector resid = ev.grad_s - y;
  double rnorm = residual_norm_inf(resid);
  int it = 0;
  for (; it < cfg.max_iter && rnorm > tol; ++it) {
    Eigen::LLT<Matrix> llt(ev.hess_s);
    if (llt.info() != Eigen::Success) {
      throw NoSaddlepointError("solve_saddlepoint: K0'' not positive definite");
    }
    Vector step = llt.solve(-resid);

    // Damped step: halve while the trial leaves the domain or the residual
    // does not decrease.
    double alpha = 1.0;
    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      RowVector trial = s + alpha * step.transpose();
      if (in_domain(trial)) {
        CgfEvaluation trial_ev = evaluate(model, trial, theta, block::grad_s | block::hess_s);
        const double trial_norm = residual_norm_inf(trial_ev.grad_s - y);
        if (trial_norm < rnorm) {
          s = trial;
          ev = std::move(trial_ev);
          resid = ev.grad_s - y;
          rnorm = trial_norm;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }

  if (rnorm > tol) {
    throw NoSaddlepointError("solve_saddlepoint: residual " + std::to_string(rnorm) +
                             " not reduced below tolerance in " + std::to_string(it) +
                             " iterations (y may be outside Y_theta)");
  }

  // A residual below tolerance is not enough when y sits on the boundary of
  // Y_theta: the iterates run away while K0' decays toward its infimum. At a
  // genuine interior solution the remaining Newton correction is negligible.
  {
    Eigen::LLT<Matrix> llt(ev.hess_s);
    if (llt.info() != Eigen::Success) {
      throw NoSaddlepointError("solve_saddlepoint: K0'' degenerate at the candidate point");
    }
    const Vector correction = llt.solve(resid);
    if (correction.lpNorm<Eigen::Infinity>() >
        1e-6 * (1.0 + s.lpNorm<Eigen::Infinity>())) {
      throw NoSaddlepointError(
          "solve_saddlepoint: candidate point is degenerate (y on or outside the "
          "boundary of Y_theta)");
    }
  }

  SaddleResult res;
  res.s_hat = s;
  res.hess_at_saddle = ev.hess_s;
  res.residual_norm = rnorm;
  res.iterations = it;
  auto sens = saddle_sensitivities(model, theta, s);
  res.sens_theta = std::move(sens.first);
  res.sens_y = std::move(sens.second);
  return res;
}

std::pair<Matrix, Matrix> saddle_sensitivities(const CgfModel& model, const Vector& theta,
                                               const RowVector& s_hat) {
  CgfEvaluation ev = evaluate(model, s_hat, theta, block::hess_s | block::cross);
  Matrix inv = spd_inverse(ev.hess_s, "saddle_sensitivities");
  Matrix sens_theta = -inv * ev.cross;
  return {std::move(sens_theta), std::move(inv)};
}

}  // namespace saddlemax
