#include "saddlemax/mle.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace saddlemax {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool negative_definite(const Matrix& H, bool* near_singular) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (H + H.transpose()));
  const double emin = eig.eigenvalues().minCoeff();
  const double emax = eig.eigenvalues().maxCoeff();
  if (near_singular != nullptr) {
    const double mag_max = std::max(std::abs(emin), std::abs(emax));
    const double mag_min = std::min(std::abs(emin), std::abs(emax));
    *near_singular = mag_min < 1e-8 * mag_max;
  }
  return emax < 0.0;
}

using Objective = std::function<double(const Vector&)>;
using Gradient = std::function<RowVector(const Vector&)>;

RowVector fd_gradient(const Objective& f, const Vector& theta, const Box& box) {
  const int p = static_cast<int>(theta.size());
  RowVector g(p);
  for (int j = 0; j < p; ++j) {
    double h = std::max(1e-7, 1e-7 * std::abs(theta[j]));
    // Shrink the stencil rather than leave the box.
    while (h > 1e-12 &&
           (!box.contains([&] { Vector t = theta; t[j] += h; return t; }()) ||
            !box.contains([&] { Vector t = theta; t[j] -= h; return t; }()))) {
      h *= 0.5;
    }
    Vector tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    g[j] = (f(tp) - f(tm)) / (2.0 * h);
  }
  return g;
}

Matrix fd_hessian_from_grad(const Gradient& g, const Vector& theta, const Box& box) {
  const int p = static_cast<int>(theta.size());
  Matrix H(p, p);
  for (int j = 0; j < p; ++j) {
    double h = std::max(1e-6, 1e-6 * std::abs(theta[j]));
    Vector tp = theta, tm = theta;
    tp[j] = std::min(tp[j] + h, box.hi[j]);
    tm[j] = std::max(tm[j] - h, box.lo[j]);
    const double span = tp[j] - tm[j];
    H.col(j) = ((g(tp) - g(tm)) / span).transpose();
  }
  return 0.5 * (H + H.transpose());
}

struct AscentProblem {
  Objective f;
  Gradient g;
  std::function<Matrix(const Vector&)> hess;  // may be empty -> FD of g
  std::function<bool(const Vector&)> feasible;
};

MleFit newton_ascent(const AscentProblem& prob, const Vector& theta_init, const Box& box,
                     double tol_scaled, int max_iter) {
  MleFit fit;
  Vector theta = box.clamp(theta_init);
  if (!prob.feasible(theta)) throw DomainError("fit_mle: initial point infeasible");

  double fval = prob.f(theta);
  RowVector grad = prob.g(theta);
  fit.trace.emplace_back(theta, fval);

  auto hess_at = [&](const Vector& th) {
    return prob.hess ? prob.hess(th) : fd_hessian_from_grad(prob.g, th, box);
  };

  int it = 0;
  for (; it < max_iter; ++it) {
    if (grad.lpNorm<Eigen::Infinity>() <= tol_scaled) break;

    Matrix H = hess_at(theta);
    // Make the quadratic model strictly concave before taking the step.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
    const double emax = eig.eigenvalues().maxCoeff();
    if (emax > -1e-12) {
      const double shift = emax + std::max(1.0, std::abs(emax)) * 1e-2;
      H -= shift * Matrix::Identity(H.rows(), H.cols());
    }
    Vector step = -H.ldlt().solve(grad.transpose());

    double alpha = 1.0;
    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      Vector trial = box.clamp(theta + alpha * step);
      if ((trial - theta).lpNorm<Eigen::Infinity>() == 0.0) {
        alpha *= 0.5;
        continue;
      }
      if (prob.feasible(trial)) {
        double ftrial;
        try {
          ftrial = prob.f(trial);
        } catch (const std::runtime_error&) {
          alpha *= 0.5;
          continue;
        }
        if (ftrial >= fval - 1e-12 * (1.0 + std::abs(fval))) {
          theta = trial;
          fval = ftrial;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    grad = prob.g(theta);
    fit.trace.emplace_back(theta, fval);
  }

  fit.theta_hat = theta;
  fit.grad_norm = grad.lpNorm<Eigen::Infinity>();
  fit.iterations = it;
  fit.hessian_theta = hess_at(theta);
  bool near_sing = false;
  const bool negdef = negative_definite(fit.hessian_theta, &near_sing);
  fit.near_singular_hessian = near_sing;
  fit.converged = fit.grad_norm <= tol_scaled && negdef;
  return fit;
}

}  // namespace

Box Box::around(const Vector& center, double halfwidth) {
  Box b;
  b.lo = center.array() - halfwidth;
  b.hi = center.array() + halfwidth;
  return b;
}

bool Box::contains(const Vector& theta) const {
  for (int i = 0; i < theta.size(); ++i) {
    if (!(theta[i] >= lo[i] && theta[i] <= hi[i])) return false;
  }
  return true;
}

Vector Box::clamp(const Vector& theta) const {
  Vector out = theta;
  for (int i = 0; i < theta.size(); ++i) out[i] = std::min(std::max(out[i], lo[i]), hi[i]);
  return out;
}

MleFit fit_mle(const CgfModel& model, const Observation& obs, ApproximationKind kind,
               const Vector& theta_init, const Box& box, const MleOptions& opt) {
  if (!model.theta_in_domain(theta_init)) throw DomainError("fit_mle: theta_init not in domain");
  AscentProblem prob;
  prob.f = [&](const Vector& th) { return log_likelihood(model, th, obs, kind, opt.quad).total; };
  prob.g = [&](const Vector& th) {
    return grad_log_likelihood(model, th, obs, kind, opt.quad);
  };
  if (kind == ApproximationKind::ZerothOrder) {
    // Analytic Hessian of n log L*_0(s_hat(theta;y), theta).
    prob.hess = [&](const Vector& th) {
      SaddleResult sr = solve_saddlepoint(model, th, obs.y);
      CgfEvaluation ev = evaluate(model, sr.s_hat, th,
                                  block::hess_s | block::cross | block::hess_theta);
      Eigen::LLT<Matrix> llt(ev.hess_s);
      Matrix H = ev.hess_theta - ev.cross.transpose() * llt.solve(ev.cross);
      return Matrix(obs.n * H);
    };
  }
  prob.feasible = [&](const Vector& th) { return model.theta_in_domain(th); };
  MleFit fit = newton_ascent(prob, theta_init, box, opt.tol * (1.0 + obs.n), opt.max_iter);
  fit.kind = kind;
  return fit;
}

MleFit fit_mle_closed_form(const CgfModel& model, const Observation& obs,
                           const Vector& theta_init, const Box& box, const MleOptions& opt) {
  if (!model.capabilities().has_closed_form_likelihood) {
    throw NotSupportedError("fit_mle_closed_form: model has no closed-form likelihood");
  }
  AscentProblem prob;
  prob.f = [&](const Vector& th) {
    auto v = model.closed_form_log_density(th, obs.x, obs.n);
    if (!v) throw DomainError("closed-form density unavailable at this observation");
    return *v;
  };
  prob.g = [&](const Vector& th) -> RowVector {
    auto g = model.closed_form_grad_log_density(th, obs.x, obs.n);
    if (g) return *g;
    return fd_gradient(prob.f, th, box);
  };
  prob.feasible = [&](const Vector& th) { return model.theta_in_domain(th); };
  MleFit fit = newton_ascent(prob, theta_init, box, opt.tol * (1.0 + obs.n), opt.max_iter);
  fit.kind = ApproximationKind::Exact;
  return fit;
}

MlePair mle_error_pair(const CgfModel& model, const Observation& obs, ApproximationKind kind1,
                       ApproximationKind kind2, const Vector& theta_init, const Box& box,
                       const MleOptions& opt) {
  MlePair pair;
  pair.first = fit_mle(model, obs, kind1, theta_init, box, opt);
  pair.second = fit_mle(model, obs, kind2, theta_init, box, opt);
  if (!pair.first.converged || !pair.second.converged) {
    throw NotConvergedError(std::string("mle_error_pair: fit for kind ") +
                            (!pair.first.converged ? kind_name(kind1) : kind_name(kind2)) +
                            " did not converge");
  }
  pair.gap = (pair.first.theta_hat - pair.second.theta_hat).lpNorm<Eigen::Infinity>();
  return pair;
}

IdentifiabilityReport identifiability(const CgfModel& model, const RowVector& s0,
                                      const Vector& theta0,
                                      const std::optional<ParameterSplit>& split,
                                      const std::optional<Vector>& xi0) {
  if (!model.theta_in_domain(theta0)) throw DomainError("identifiability: invalid theta0");
  if (!model.in_domain(s0, theta0)) throw DomainError("identifiability: (s0,theta0) not interior");
  const int m = model.signature().m;

  IdentifiabilityReport rep;
  unsigned req = block::hess_s | block::cross | block::hess_theta;
  const bool partial = split.has_value();
  if (partial) req |= block::dhess_dtheta;
  if (partial && xi0) req |= block::d2hess_dtheta2;
  CgfEvaluation ev = evaluate(model, s0, theta0, req);

  rep.A = ev.hess_s;
  rep.B = ev.cross;
  Eigen::LLT<Matrix> lltA(rep.A);
  if (lltA.info() != Eigen::Success) {
    throw SingularHessianError("identifiability: K0''(s0) not positive definite");
  }
  rep.H = ev.hess_theta - rep.B.transpose() * lltA.solve(rep.B);
  rep.H_negdef = negative_definite(rep.H, nullptr);

  if (!partial) {
    rep.mode = IdentifiabilityMode::full;
    return rep;
  }

  rep.mode = IdentifiabilityMode::partial;
  if (s0.lpNorm<Eigen::Infinity>() != 0.0) {
    throw DomainError("identifiability: partial mode requires s0 = 0");
  }
  const auto& omega = split->omega_indices;
  const auto& nu = split->nu_indices;
  const int p1 = static_cast<int>(omega.size());
  const int p2 = static_cast<int>(nu.size());

  const Matrix Ainv = lltA.solve(Matrix::Identity(m, m));
  rep.J = Ainv;
  if (p1 > 0) {
    rep.B_omega.resize(m, p1);
    for (int j = 0; j < p1; ++j) rep.B_omega.col(j) = rep.B.col(omega[j]);
    Eigen::JacobiSVD<Matrix> svd(rep.B_omega);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 1e-10 * sv(0)) {
      throw RankDeficientError("identifiability: B_omega has rank < p1");
    }
    const Matrix AinvB = lltA.solve(rep.B_omega);
    const Matrix inner = rep.B_omega.transpose() * AinvB;  // p1 x p1, SPD
    rep.J -= AinvB * inner.llt().solve(AinvB.transpose());
  }

  // Off-diagonal vanishing check at theta0.
  rep.offdiag_ok = true;
  for (int j = 0; j < p2; ++j) {
    const Matrix& Q = ev.dhess_dtheta[nu[j]];
    if (p1 > 0) {
      const Matrix off = rep.B_omega.transpose() * lltA.solve(Q) * rep.J;
      if (off.lpNorm<Eigen::Infinity>() > 1e-10) rep.offdiag_ok = false;
    }
  }

  if (xi0) {
    if (xi0->size() != m) throw DomainError("identifiability: xi0 has wrong dimension");
    rep.xi0_residuals.resize(p2);
    rep.E.resize(p2, p2);
    const Vector Jxi = rep.J * (*xi0);
    for (int j = 0; j < p2; ++j) {
      const Matrix& Qj = ev.dhess_dtheta[nu[j]];
      rep.xi0_residuals[j] = Jxi.dot(Qj * Jxi) - lltA.solve(Qj).trace();
    }
    for (int i = 0; i < p2; ++i) {
      const Matrix& Qi = ev.dhess_dtheta[nu[i]];
      for (int j = i; j < p2; ++j) {
        const Matrix& Qj = ev.dhess_dtheta[nu[j]];
        const Matrix& Qij = ev.d2hess_dtheta2[nu[i]][nu[j]];
        const double quad = Jxi.dot((0.5 * Qij - Qi * rep.J * Qj) * Jxi);
        const double tr = 0.5 * (lltA.solve(Qij).trace() -
                                 (lltA.solve(lltA.solve(Qi)) * Qj).trace());
        rep.E(i, j) = rep.E(j, i) = quad - tr;
      }
    }
    rep.E = 0.5 * (rep.E + rep.E.transpose());
    rep.E_negdef = negative_definite(rep.E, nullptr);
  }
  return rep;
}

ExpFamilyMle expfamily_mle(const ExpFamilyAdapter& adapter, const CgfModel& model,
                           const Observation& obs, const Vector& probe1, const Vector& probe2) {
  auto eta_hat_for = [&](const Vector& probe) -> RowVector {
    SaddleResult sr = solve_saddlepoint(model, probe, obs.y);
    return adapter.natural_param(probe) + sr.s_hat;
  };
  ExpFamilyMle out;
  out.eta_hat = eta_hat_for(probe1);
  const RowVector eta2 = eta_hat_for(probe2);
  if ((out.eta_hat - eta2).lpNorm<Eigen::Infinity>() > 1e-9) {
    throw DomainError("expfamily_mle: eta_hat depends on the probe parameter; the "
                      "adapter does not match the model");
  }
  if (adapter.theta_from_natural) out.theta_hat = adapter.theta_from_natural(out.eta_hat);
  return out;
}

}  // namespace saddlemax
