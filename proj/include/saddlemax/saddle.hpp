#ifndef SADDLEMAX_SADDLE_HPP
#define SADDLEMAX_SADDLE_HPP

#include "saddlemax/cgf.hpp"

namespace saddlemax {

struct SolverConfig {
  double tol = 1e-12;   // on ||K0'(s)-y||_inf relative to 1+||y||_inf
  int max_iter = 100;
  std::optional<RowVector> init;  // default: model.initial_dual_point
};

struct SaddleResult {
  RowVector s_hat;        // 1 x m
  Matrix hess_at_saddle;  // K0''(s_hat;theta), m x m SPD
  Matrix sens_theta;      // grad_theta s_hat^T = -K0''^{-1} grad_s grad_theta K0, m x p
  Matrix sens_y;          // grad_y s_hat^T = K0''^{-1}, m x m SPD
  double residual_norm = 0.0;
  int iterations = 0;
};

// Solve K0'(s;theta) = y by damped Newton, exploiting strict convexity of
// s -> K0(s;theta). Throws NoSaddlepointError when the residual cannot be
// driven below tolerance (y outside or on the boundary of Y_theta), and
// DomainError for invalid theta.
SaddleResult solve_saddlepoint(const CgfModel& model, const Vector& theta, const Vector& y,
                               const SolverConfig& cfg = SolverConfig());

// Sensitivities of an already-computed saddlepoint:
// (grad_theta s_hat^T, grad_y s_hat^T) = (-K0''^{-1} grad_s grad_theta K0, K0''^{-1}).
std::pair<Matrix, Matrix> saddle_sensitivities(const CgfModel& model, const Vector& theta,
                                               const RowVector& s_hat);

}  // namespace saddlemax

#endif
