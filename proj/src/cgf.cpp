#include "saddlemax/cgf.hpp"

#include <cmath>
#include <sstream>

namespace saddlemax {

namespace {

std::string point_str(const RowVector& s, const Vector& theta) {
  std::ostringstream os;
  os << "s=[";
  for (int i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "], theta=[";
  for (int i = 0; i < theta.size(); ++i) os << (i ? "," : "") << theta[i];
  os << "]";
  return os.str();
}

// Single-block analytic evaluation helper.
CgfEvaluation eval_block(const CgfModel& model, const RowVector& s, const Vector& theta,
                         unsigned request) {
  CgfEvaluation out;
  model.eval_analytic(s, theta, request, out);
  return out;
}

double value_at(const CgfModel& model, const RowVector& s, const Vector& theta) {
  if (!model.in_domain(s, theta)) {
    throw DomainError("finite-difference stencil left the domain at " + point_str(s, theta));
  }
  return eval_block(model, s, theta, block::value).k0;
}

Vector grad_s_at(const CgfModel& model, const RowVector& s, const Vector& theta) {
  if (!model.in_domain(s, theta)) {
    throw DomainError("finite-difference stencil left the domain at " + point_str(s, theta));
  }
  return eval_block(model, s, theta, block::grad_s).grad_s;
}

Matrix hess_s_at(const CgfModel& model, const RowVector& s, const Vector& theta) {
  if (!model.in_domain(s, theta)) {
    throw DomainError("finite-difference stencil left the domain at " + point_str(s, theta));
  }
  return eval_block(model, s, theta, block::hess_s).hess_s;
}

}  // namespace

double FdConfig::step(double coord) const {
  return std::max(step_abs, step_rel * std::abs(coord));
}

double FdConfig::step2(double coord) const {
  return std::max(step2_abs, step2_abs * std::abs(coord));
}

ComplexCgf CgfModel::eval_complex(const RowVector&, const RowVector&, const Vector&) const {
  throw NotSupportedError("model has no complex MGF capability");
}

std::optional<double> CgfModel::closed_form_log_density(const Vector&, const Vector&,
                                                        double) const {
  return std::nullopt;
}

std::optional<RowVector> CgfModel::closed_form_grad_log_density(const Vector&, const Vector&,
                                                                double) const {
  return std::nullopt;
}

RowVector CgfModel::initial_dual_point(const Vector&) const {
  return RowVector::Zero(signature().m);
}

std::optional<std::pair<RowVector, RowVector>> CgfModel::dual_box_hint(const Vector&) const {
  return std::nullopt;
}

Vector CgfModel::sample(const Vector&, double, std::mt19937_64&) const {
  throw NotSupportedError("model has no sampler");
}

CgfEvaluation evaluate(const CgfModel& model, const RowVector& s, const Vector& theta,
                       unsigned request, const FdConfig& fd) {
  if (!model.theta_in_domain(theta)) {
    throw DomainError("theta outside the parameter domain");
  }
  if (!model.in_domain(s, theta)) {
    throw DomainError("(s,theta) outside the joint domain at " + point_str(s, theta));
  }
  const int m = model.signature().m;
  const int p = model.signature().p;

  CgfEvaluation out;
  model.eval_analytic(s, theta, request, out);

  unsigned missing = request & ~out.present;
  if (missing == 0) return out;
  if (!fd.enabled) {
    throw NotSupportedError("analytic block unavailable and FD fallback disabled");
  }

  // s-side blocks can always be rebuilt from K0 values.
  if (missing & block::grad_s) {
    Vector g(m);
    for (int i = 0; i < m; ++i) {
      const double h = fd.step(s[i]);
      RowVector sp = s, sm = s;
      sp[i] += h;
      sm[i] -= h;
      g[i] = (value_at(model, sp, theta) - value_at(model, sm, theta)) / (2.0 * h);
    }
    out.grad_s = g;
    out.present |= block::grad_s;
    out.fd_blocks |= block::grad_s;
  }
  if (missing & block::hess_s) {
    Matrix H(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = i; j < m; ++j) {
        const double hi = fd.step2(s[i]);
        const double hj = fd.step2(s[j]);
        RowVector a = s, b = s, c = s, d = s;
        a[i] += hi; a[j] += hj;
        b[i] += hi; b[j] -= hj;
        c[i] -= hi; c[j] += hj;
        d[i] -= hi; d[j] -= hj;
        H(i, j) = H(j, i) = (value_at(model, a, theta) - value_at(model, b, theta) -
                             value_at(model, c, theta) + value_at(model, d, theta)) /
                            (4.0 * hi * hj);
      }
    }
    out.hess_s = H;
    out.present |= block::hess_s;
    out.fd_blocks |= block::hess_s;
  }

  if (missing & block::grad_theta) {
    RowVector g(p);
    for (int j = 0; j < p; ++j) {
      const double h = fd.step(theta[j]);
      Vector tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      g[j] = (value_at(model, s, tp) - value_at(model, s, tm)) / (2.0 * h);
    }
    out.grad_theta = g;
    out.present |= block::grad_theta;
    out.fd_blocks |= block::grad_theta;
  }

  if (missing & block::cross) {
    Matrix C(m, p);
    for (int j = 0; j < p; ++j) {
      const double h = fd.step(theta[j]);
      Vector tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      C.col(j) = (grad_s_at(model, s, tp) - grad_s_at(model, s, tm)) / (2.0 * h);
    }
    out.cross = C;
    out.present |= block::cross;
    out.fd_blocks |= block::cross;
  }

  if (missing & block::hess_theta) {
    Matrix H(p, p);
    const bool have_gt = out.has(block::grad_theta) && !(out.fd_blocks & block::grad_theta);
    if (have_gt) {
      Matrix G(p, p);  // row j = d grad_theta / d theta_j
      for (int j = 0; j < p; ++j) {
        const double h = fd.step(theta[j]);
        Vector tp = theta, tm = theta;
        tp[j] += h;
        tm[j] -= h;
        G.row(j) = (eval_block(model, s, tp, block::grad_theta).grad_theta -
                    eval_block(model, s, tm, block::grad_theta).grad_theta) /
                   (2.0 * h);
      }
      H = 0.5 * (G + G.transpose());
    } else {
      for (int i = 0; i < p; ++i) {
        for (int j = i; j < p; ++j) {
          const double hi = fd.step2(theta[i]);
          const double hj = fd.step2(theta[j]);
          Vector a = theta, b = theta, c = theta, d = theta;
          a[i] += hi; a[j] += hj;
          b[i] += hi; b[j] -= hj;
          c[i] -= hi; c[j] += hj;
          d[i] -= hi; d[j] -= hj;
          H(i, j) = H(j, i) = (value_at(model, s, a) - value_at(model, s, b) -
                               value_at(model, s, c) + value_at(model, s, d)) /
                              (4.0 * hi * hj);
        }
      }
    }
    out.hess_theta = H;
    out.present |= block::hess_theta;
    out.fd_blocks |= block::hess_theta;
  }

  if (missing & block::dhess_dtheta) {
    out.dhess_dtheta.resize(p);
    for (int j = 0; j < p; ++j) {
      const double h = fd.step(theta[j]);
      Vector tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      out.dhess_dtheta[j] = (hess_s_at(model, s, tp) - hess_s_at(model, s, tm)) / (2.0 * h);
    }
    out.present |= block::dhess_dtheta;
    out.fd_blocks |= block::dhess_dtheta;
  }

  if (missing & block::dhess_ds) {
    out.dhess_ds.resize(m);
    for (int i = 0; i < m; ++i) {
      const double h = fd.step(s[i]);
      RowVector sp = s, sm = s;
      sp[i] += h;
      sm[i] -= h;
      out.dhess_ds[i] = (hess_s_at(model, sp, theta) - hess_s_at(model, sm, theta)) / (2.0 * h);
    }
    out.present |= block::dhess_ds;
    out.fd_blocks |= block::dhess_ds;
  }

  if (missing & block::d2hess_dtheta2) {
    // Second theta-differences of the analytic Hessian.
    out.d2hess_dtheta2.assign(p, std::vector<Matrix>(p));
    const Matrix H0 = out.has(block::hess_s) ? out.hess_s : hess_s_at(model, s, theta);
    for (int i = 0; i < p; ++i) {
      for (int j = i; j < p; ++j) {
        const double hi = fd.step2(theta[i]);
        const double hj = fd.step2(theta[j]);
        Matrix D;
        if (i == j) {
          Vector tp = theta, tm = theta;
          tp[i] += hi;
          tm[i] -= hi;
          D = (hess_s_at(model, s, tp) - 2.0 * H0 + hess_s_at(model, s, tm)) / (hi * hi);
        } else {
          Vector a = theta, b = theta, c = theta, d = theta;
          a[i] += hi; a[j] += hj;
          b[i] += hi; b[j] -= hj;
          c[i] -= hi; c[j] += hj;
          d[i] -= hi; d[j] -= hj;
          D = (hess_s_at(model, s, a) - hess_s_at(model, s, b) - hess_s_at(model, s, c) +
               hess_s_at(model, s, d)) /
              (4.0 * hi * hj);
        }
        out.d2hess_dtheta2[i][j] = D;
        out.d2hess_dtheta2[j][i] = D;
      }
    }
    out.present |= block::d2hess_dtheta2;
    out.fd_blocks |= block::d2hess_dtheta2;
  }

  return out;
}

CgfEvaluation fd_derivative_oracle(const CgfModel& model, const RowVector& s,
                                   const Vector& theta, unsigned which, double step) {
  const int m = model.signature().m;
  const int p = model.signature().p;
  if (!model.in_domain(s, theta)) throw DomainError("oracle point outside domain");
  CgfEvaluation out;

  auto k0 = [&](const RowVector& ss, const Vector& tt) { return value_at(model, ss, tt); };

  if (which == block::grad_s) {
    out.grad_s.resize(m);
    for (int i = 0; i < m; ++i) {
      RowVector sp = s, sm = s;
      sp[i] += step;
      sm[i] -= step;
      out.grad_s[i] = (k0(sp, theta) - k0(sm, theta)) / (2.0 * step);
    }
    out.present = block::grad_s;
    return out;
  }
  if (which == block::grad_theta) {
    out.grad_theta.resize(p);
    for (int j = 0; j < p; ++j) {
      Vector tp = theta, tm = theta;
      tp[j] += step;
      tm[j] -= step;
      out.grad_theta[j] = (k0(s, tp) - k0(s, tm)) / (2.0 * step);
    }
    out.present = block::grad_theta;
    return out;
  }
  if (which == block::hess_s || which == block::hess_theta || which == block::cross) {
    const int rows = (which == block::hess_theta) ? p : m;
    const int cols = (which == block::hess_s) ? m : p;
    Matrix H(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        RowVector sa = s, sb = s, sc = s, sd = s;
        Vector ta = theta, tb = theta, tc = theta, td = theta;
        auto bump_row = [&](RowVector& sv, Vector& tv, double d) {
          if (which == block::hess_theta) tv[i] += d; else sv[i] += d;
        };
        auto bump_col = [&](RowVector& sv, Vector& tv, double d) {
          if (which == block::hess_s) sv[j] += d; else tv[j] += d;
        };
        bump_row(sa, ta, step);  bump_col(sa, ta, step);
        bump_row(sb, tb, step);  bump_col(sb, tb, -step);
        bump_row(sc, tc, -step); bump_col(sc, tc, step);
        bump_row(sd, td, -step); bump_col(sd, td, -step);
        H(i, j) = (k0(sa, ta) - k0(sb, tb) - k0(sc, tc) + k0(sd, td)) / (4.0 * step * step);
      }
    }
    if (which == block::hess_s) out.hess_s = H;
    else if (which == block::hess_theta) out.hess_theta = H;
    else out.cross = H;
    out.present = which;
    return out;
  }
  if (which == block::dhess_dtheta) {
    out.dhess_dtheta.resize(p);
    for (int j = 0; j < p; ++j) {
      Vector tp = theta, tm = theta;
      tp[j] += step;
      tm[j] -= step;
      out.dhess_dtheta[j] = (hess_s_at(model, s, tp) - hess_s_at(model, s, tm)) / (2.0 * step);
    }
    out.present = which;
    return out;
  }
  if (which == block::dhess_ds) {
    out.dhess_ds.resize(m);
    for (int i = 0; i < m; ++i) {
      RowVector sp = s, sm = s;
      sp[i] += step;
      sm[i] -= step;
      out.dhess_ds[i] = (hess_s_at(model, sp, theta) - hess_s_at(model, sm, theta)) / (2.0 * step);
    }
    out.present = which;
    return out;
  }
  throw NotSupportedError("fd_derivative_oracle: unknown block id");
}

std::pair<Complex, ComplexVector> eval_complex_mgf(const CgfModel& model, const RowVector& s,
                                                   const RowVector& phi, const Vector& theta) {
  if (!model.capabilities().has_complex_mgf) {
    throw NotSupportedError("model has no complex MGF capability");
  }
  if (!model.in_domain(s, theta)) throw DomainError("real part outside domain");
  ComplexCgf ev = model.eval_complex(s, phi, theta);
  return {ev.m0, ev.grad_s};
}

}  // namespace saddlemax
