#include "saddlemax/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

namespace saddlemax {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Deterministic pairwise reduction; summation order is independent of any
// parallel execution of the node loop.
Complex pairwise_sum(std::vector<Complex>& v, size_t lo, size_t hi) {
  if (hi - lo <= 8) {
    Complex acc(0.0, 0.0);
    for (size_t i = lo; i < hi; ++i) acc += v[i];
    return acc;
  }
  const size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

Complex ipow(Complex base, long long e) {
  Complex acc(1.0, 0.0);
  while (e > 0) {
    if (e & 1) acc *= base;
    base *= base;
    e >>= 1;
  }
  return acc;
}

bool near_integer(double n, long long& out) {
  const double r = std::round(n);
  if (std::abs(n - r) < 1e-9 && r >= 1.0 && r < 9.0e15) {
    out = static_cast<long long>(r);
    return true;
  }
  return false;
}

struct NodeGrid {
  std::vector<double> phi;     // node positions, ascending
  std::vector<double> weight;  // quadrature weight (incl. taper window)
  int zero_index = 0;          // index of phi = 0
  double h = 0.0;              // base spacing (uniform grids)
  int core_lo = 0, core_hi = 0;  // untapered region [core_lo, core_hi]
};

NodeGrid continuous_axis_grid(double radius, const QuadratureConfig& quad) {
  NodeGrid g;
  int n = quad.nodes_per_dim;
  if (n < 3) n = 3;
  if (n % 2 == 0) ++n;  // phi = 0 must be a node
  const int half = (n - 1) / 2;
  const double h = radius / half;
  g.h = h;

  if (quad.scheme == QuadratureScheme::tanh_sinh) {
    // tanh-sinh map of a uniform grid onto (-radius, radius); weights carry
    // the Jacobian. No taper extension in this scheme.
    const double umax = 3.0;
    const double du = umax / half;
    for (int k = -half; k <= half; ++k) {
      const double u = k * du;
      const double t = std::tanh(0.5 * kPi * std::sinh(u));
      const double jac = radius * 0.5 * kPi * std::cosh(u) /
                         std::pow(std::cosh(0.5 * kPi * std::sinh(u)), 2);
      g.phi.push_back(radius * t);
      g.weight.push_back(jac * du / h);  // relative to base spacing h
    }
    g.zero_index = half;
    g.core_lo = 0;
    g.core_hi = static_cast<int>(g.phi.size()) - 1;
    return g;
  }

  int ext = 0;
  if (quad.tail_extension > 1.0) {
    ext = static_cast<int>(std::ceil((quad.tail_extension - 1.0) * radius / h));
  }
  const int total_half = half + ext;
  for (int k = -total_half; k <= total_half; ++k) {
    const double phi = k * h;
    double w = 1.0;
    const double a = std::abs(phi);
    if (ext > 0 && a > radius) {
      const double t = (a - radius) / (ext * h);
      const double c = std::cos(0.5 * kPi * std::min(t, 1.0));
      w = c * c;
    } else if (ext == 0 && std::abs(k) == total_half) {
      w = 0.5;  // trapezoid end weight
    }
    g.phi.push_back(phi);
    g.weight.push_back(w);
  }
  g.zero_index = total_half;
  g.core_lo = ext;
  g.core_hi = static_cast<int>(g.phi.size()) - 1 - ext;
  return g;
}

NodeGrid lattice_axis_grid(const QuadratureConfig& quad) {
  NodeGrid g;
  int n = quad.lattice_nodes_per_dim;
  if (n < 8) n = 8;
  if (n % 2 != 0) ++n;  // even count puts phi = 0 on the grid
  const double h = 2.0 * kPi / n;
  g.h = h;
  for (int k = 0; k < n; ++k) {
    g.phi.push_back(-kPi + k * h);
    g.weight.push_back(1.0);
  }
  g.zero_index = n / 2;
  g.core_lo = 0;
  g.core_hi = n - 1;
  return g;
}

// One evaluated node of the inversion integrand.
struct NodeEval {
  Complex e;  // exp(n [K0(s+i phi) - K0(s) - i phi K0'(s)])
  ComplexCgf cgf;
};

class IntegrandEvaluator {
 public:
  IntegrandEvaluator(const CgfModel& model, const Vector& theta, const RowVector& s,
                     double n, bool want_grad)
      : model_(model), theta_(theta), s_(s), n_(n), want_grad_(want_grad) {
    const Capabilities caps = model.capabilities();
    if (!caps.has_complex_mgf) {
      throw NotSupportedError("exact_p_factor: model lacks complex MGF capability");
    }
    if (want_grad && !caps.has_complex_theta_grad) {
      throw NotSupportedError("exact_p_factor: model lacks complex theta-gradients");
    }
    branch_free_ = caps.has_branch_free_complex_k0;
    integer_n_ = near_integer(n, n_int_);
    CgfEvaluation base = evaluate(model, s, theta, block::value | block::grad_s | block::cross);
    k0s_ = base.k0;
    gs_ = base.grad_s;
    cross_ = base.cross;
    if (!branch_free_ && !integer_n_ && model.signature().m > 1) {
      throw NotSupportedError(
          "exact_p_factor: non-integer n with branch-dependent complex K0 is only "
          "supported in one dimension");
    }
  }

  const Vector& grad_s_real() const { return gs_; }
  const Matrix& cross_real() const { return cross_; }

  // `prev_arg` carries the unwrapped argument of M0(s+i phi)/M0(s) along a
  // sweep that starts at phi = 0; ignored on branch-free / integer-n paths.
  NodeEval eval(const RowVector& phi, double* prev_arg) const {
    NodeEval out;
    out.cgf = model_.eval_complex(s_, phi, theta_);
    const double phase0 = phi * gs_;  // phi K0'(s)
    if (branch_free_ && out.cgf.has_k0) {
      const Complex expo = n_ * (out.cgf.k0 - k0s_ - Complex(0.0, 1.0) * phase0);
      out.e = std::exp(expo);
      return out;
    }
    const Complex ratio = out.cgf.m0 / std::exp(k0s_);
    if (integer_n_) {
      out.e = ipow(ratio, n_int_) * std::exp(Complex(0.0, -n_ * phase0));
      return out;
    }
    const double mag = std::abs(ratio);
    double arg = std::arg(ratio);
    if (prev_arg != nullptr) {
      arg += 2.0 * kPi * std::round((*prev_arg - arg) / (2.0 * kPi));
      *prev_arg = arg;
    }
    const Complex log_ratio(std::log(std::max(mag, 1e-300)), arg);
    out.e = (mag == 0.0) ? Complex(0.0, 0.0)
                         : std::exp(n_ * log_ratio + Complex(0.0, -n_ * phase0));
    return out;
  }

  // Derivative factors of the integrand (differentiation under the integral).
  Complex theta_factor(const NodeEval& ne, const RowVector& phi, int j,
                       const RowVector& grad_theta_real) const {
    const double dot = phi * cross_.col(j);
    return n_ * (ne.cgf.grad_theta[j] - grad_theta_real[j] - Complex(0.0, dot));
  }
  Complex s_factor(const NodeEval& ne, const RowVector& phi, int i, const Matrix& hess_real) const {
    const double dot = phi * hess_real.col(i);
    return n_ * (ne.cgf.grad_s[i] - gs_[i] - Complex(0.0, dot));
  }

 private:
  const CgfModel& model_;
  Vector theta_;
  RowVector s_;
  double n_;
  bool want_grad_;
  bool branch_free_ = false;
  bool integer_n_ = false;
  long long n_int_ = 0;
  double k0s_ = 0.0;
  Vector gs_;
  Matrix cross_;
};

struct RawIntegrals {
  Complex p{0.0, 0.0};
  std::vector<Complex> dp_dtheta;
  std::vector<Complex> dp_ds;
  double peak = 0.0;
  double boundary_max = 0.0;
};

// Tensor-product quadrature over the node grids, with argument unwrapping
// organised in sweeps that start from phi = 0.
RawIntegrals accumulate(const CgfModel& model, const Vector& theta, const RowVector& s,
                        double n, const std::vector<NodeGrid>& grids, bool want_grad,
                        const RowVector& grad_theta_real, const Matrix& hess_real) {
  const int m = model.signature().m;
  const int p = model.signature().p;
  IntegrandEvaluator ev(model, theta, s, n, want_grad);

  RawIntegrals out;
  out.dp_dtheta.assign(p, Complex(0.0, 0.0));
  out.dp_ds.assign(m, Complex(0.0, 0.0));

  const size_t n0 = grids[0].phi.size();
  const size_t n1 = (m == 2) ? grids[1].phi.size() : 1;
  std::vector<Complex> contrib(n0 * n1, Complex(0.0, 0.0));
  std::vector<std::vector<Complex>> contrib_t(p), contrib_s(m);
  if (want_grad) {
    for (auto& v : contrib_t) v.assign(n0 * n1, Complex(0.0, 0.0));
    for (auto& v : contrib_s) v.assign(n0 * n1, Complex(0.0, 0.0));
  }

  auto record = [&](size_t idx, const RowVector& phi, const NodeEval& ne, double w) {
    const double mag = std::abs(ne.e);
    out.peak = std::max(out.peak, mag);
    contrib[idx] = w * ne.e;
    if (want_grad) {
      for (int j = 0; j < p; ++j) {
        contrib_t[j][idx] = contrib[idx] * ev.theta_factor(ne, phi, j, grad_theta_real);
      }
      for (int i = 0; i < m; ++i) {
        contrib_s[i][idx] = contrib[idx] * ev.s_factor(ne, phi, i, hess_real);
      }
    }
    return mag;
  };

  if (m == 1) {
    const NodeGrid& g = grids[0];
    RowVector phi(1);
    // Upward sweep from phi = 0, then downward; keeps the unwrap continuous.
    double arg = 0.0;
    for (int k = g.zero_index; k < static_cast<int>(g.phi.size()); ++k) {
      phi[0] = g.phi[k];
      const double mag = record(k, phi, ev.eval(phi, &arg), g.weight[k]);
      if (k == static_cast<int>(g.phi.size()) - 1 || k == g.core_hi) {
        out.boundary_max = std::max(out.boundary_max, mag);
      }
    }
    arg = 0.0;
    for (int k = g.zero_index - 1; k >= 0; --k) {
      phi[0] = g.phi[k];
      const double mag = record(k, phi, ev.eval(phi, &arg), g.weight[k]);
      if (k == 0 || k == g.core_lo) out.boundary_max = std::max(out.boundary_max, mag);
    }
  } else {
    const NodeGrid& g0 = grids[0];
    const NodeGrid& g1 = grids[1];
    RowVector phi(2);
    for (size_t a = 0; a < g0.phi.size(); ++a) {
      phi[0] = g0.phi[a];
      for (size_t b = 0; b < g1.phi.size(); ++b) {
        phi[1] = g1.phi[b];
        const double w = g0.weight[a] * g1.weight[b];
        const double mag = record(a * g1.phi.size() + b, phi, ev.eval(phi, nullptr), w);
        const bool on_core_edge = a == static_cast<size_t>(g0.core_lo) ||
                                  a == static_cast<size_t>(g0.core_hi) ||
                                  b == static_cast<size_t>(g1.core_lo) ||
                                  b == static_cast<size_t>(g1.core_hi);
        if (on_core_edge) out.boundary_max = std::max(out.boundary_max, mag);
      }
    }
  }

  out.p = pairwise_sum(contrib, 0, contrib.size());
  if (want_grad) {
    for (int j = 0; j < p; ++j) out.dp_dtheta[j] = pairwise_sum(contrib_t[j], 0, contrib_t[j].size());
    for (int i = 0; i < m; ++i) out.dp_ds[i] = pairwise_sum(contrib_s[i], 0, contrib_s[i].size());
  }
  return out;
}

PIntegrals compute_p(const CgfModel& model, const Vector& theta, const RowVector& s, double n,
                     const QuadratureConfig& quad, bool want_grad) {
  const ModelSignature& sig = model.signature();
  const int m = sig.m;
  if (m > 2) {
    throw NotSupportedError("exact_p_factor: inversion quadrature is limited to m <= 2");
  }
  if (!model.theta_in_domain(theta)) throw DomainError("exact_p_factor: invalid theta");
  if (!model.in_domain(s, theta)) throw DomainError("exact_p_factor: (s,theta) outside domain");

  unsigned req = block::grad_s | block::hess_s;
  if (want_grad) req |= block::grad_theta | block::cross;
  CgfEvaluation base = evaluate(model, s, theta, req);

  std::vector<NodeGrid> grids;
  const bool lattice = sig.support == SupportKind::integer_lattice;
  if (lattice) {
    for (int i = 0; i < m; ++i) grids.push_back(lattice_axis_grid(quad));
  } else {
    Eigen::LLT<Matrix> llt(base.hess_s);
    if (llt.info() != Eigen::Success) {
      throw SingularHessianError("exact_p_factor: K0''(s) not positive definite");
    }
    const Matrix inv = llt.solve(Matrix::Identity(m, m));
    double sigma_max = 0.0;
    for (int i = 0; i < m; ++i) sigma_max = std::max(sigma_max, std::sqrt(inv(i, i) / n));
    const double radius = quad.truncation_radius_multiplier * sigma_max;
    for (int i = 0; i < m; ++i) grids.push_back(continuous_axis_grid(radius, quad));
  }

  RowVector gt = want_grad ? base.grad_theta : RowVector();
  Matrix hs = base.hess_s;
  RawIntegrals raw = accumulate(model, theta, s, n, grids, want_grad, gt, hs);

  if (!lattice && quad.tail_extension <= 1.0 &&
      quad.scheme != QuadratureScheme::tanh_sinh) {
    if (raw.boundary_max > 1e-13 * raw.peak) {
      char msg[220];
      std::snprintf(msg, sizeof(msg),
                    "exact_p_factor: integrand magnitude %.3e at the truncation boundary "
                    "exceeds 1e-13 x peak %.3e; enlarge the radius, use tail_extension > 1, "
                    "or increase n",
                    raw.boundary_max, raw.peak);
      throw TailNotDecayedError(msg);
    }
  }

  double cell = 1.0;
  for (const auto& g : grids) cell *= g.h / (2.0 * kPi);

  const double re = raw.p.real() * cell;
  const double im = raw.p.imag() * cell;
  if (std::abs(im) > 1e-8 * std::max(std::abs(re), 1e-300)) {
    throw QuadratureNonpositiveError(
        "exact_p_factor: imaginary part " + std::to_string(im) +
        " fails the 1e-8 sanity bound relative to " + std::to_string(re));
  }
  if (!(re > 0.0)) {
    throw QuadratureNonpositiveError(
        "exact_p_factor: computed P = " + std::to_string(re) +
        " is not positive (insufficient nodes or radius)");
  }

  PIntegrals out;
  out.p = re;
  out.dp_dtheta.resize(sig.p);
  out.dp_ds.resize(m);
  for (int j = 0; j < sig.p; ++j) out.dp_dtheta[j] = want_grad ? raw.dp_dtheta[j].real() * cell : 0.0;
  for (int i = 0; i < m; ++i) out.dp_ds[i] = want_grad ? raw.dp_ds[i].real() * cell : 0.0;
  return out;
}

}  // namespace

const char* kind_name(ApproximationKind k) {
  switch (k) {
    case ApproximationKind::Exact: return "exact";
    case ApproximationKind::Saddlepoint: return "spa";
    case ApproximationKind::ZerothOrder: return "zeroth";
    case ApproximationKind::NormalApprox: return "normal";
  }
  return "?";
}

ApproximationKind kind_from_name(const std::string& name) {
  if (name == "exact") return ApproximationKind::Exact;
  if (name == "spa" || name == "saddlepoint") return ApproximationKind::Saddlepoint;
  if (name == "zeroth") return ApproximationKind::ZerothOrder;
  if (name == "normal") return ApproximationKind::NormalApprox;
  throw std::invalid_argument("unknown approximation kind: " + name);
}

double log_lstar0(const CgfModel& model, const Vector& theta, const RowVector& s) {
  CgfEvaluation ev = evaluate(model, s, theta, block::value | block::grad_s);
  return ev.k0 - s * ev.grad_s;
}

double exact_p_factor(const CgfModel& model, const Vector& theta, const RowVector& s, double n,
                      const QuadratureConfig& quad) {
  return compute_p(model, theta, s, n, quad, false).p;
}

PIntegrals exact_p_with_grad(const CgfModel& model, const Vector& theta, const RowVector& s,
                             double n, const QuadratureConfig& quad) {
  return compute_p(model, theta, s, n, quad, true);
}

double neg_half_logdet_2pin(const Matrix& A, double n) {
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) {
    throw SingularHessianError("logdet: matrix not positive definite");
  }
  double logdet = 0.0;
  const Matrix L = llt.matrixL();
  for (int i = 0; i < A.rows(); ++i) logdet += std::log(L(i, i));
  logdet = 2.0 * logdet + A.rows() * std::log(2.0 * kPi * n);
  return -0.5 * logdet;
}

namespace {

FactoredLogLikelihood normal_approx_loglik(const CgfModel& model, const Vector& theta,
                                           const Observation& obs) {
  RowVector zero = RowVector::Zero(model.signature().m);
  if (!model.in_domain(zero, theta)) {
    throw DomainError("NormalApprox: s = 0 is not interior for this theta");
  }
  CgfEvaluation ev = evaluate(model, zero, theta, block::grad_s | block::hess_s);
  const Vector r = obs.x - obs.n * ev.grad_s;
  Eigen::LLT<Matrix> llt(obs.n * ev.hess_s);
  if (llt.info() != Eigen::Success) {
    throw SingularHessianError("NormalApprox: covariance not positive definite");
  }
  const Vector w = llt.solve(r);
  FactoredLogLikelihood out;
  out.kind = ApproximationKind::NormalApprox;
  out.total = -0.5 * r.dot(w) + neg_half_logdet_2pin(ev.hess_s, obs.n);
  // Factored reporting reuses the saddlepoint tilt purely for bookkeeping;
  // the total above is the authoritative value.
  try {
    SaddleResult sr = solve_saddlepoint(model, theta, obs.y);
    out.log_lstar = obs.n * log_lstar0(model, theta, sr.s_hat);
    out.log_p = out.total - out.log_lstar;
    out.total = out.log_lstar + out.log_p;
    out.saddle = std::move(sr);
  } catch (const NoSaddlepointError&) {
    out.log_lstar = out.total;
    out.log_p = 0.0;
  }
  return out;
}

}  // namespace

FactoredLogLikelihood log_likelihood(const CgfModel& model, const Vector& theta,
                                     const Observation& obs, ApproximationKind kind,
                                     const QuadratureConfig& quad) {
  if (!model.theta_in_domain(theta)) throw DomainError("log_likelihood: invalid theta");
  if (kind == ApproximationKind::NormalApprox) return normal_approx_loglik(model, theta, obs);

  FactoredLogLikelihood out;
  out.kind = kind;
  SaddleResult sr = solve_saddlepoint(model, theta, obs.y);
  CgfEvaluation ev = evaluate(model, sr.s_hat, theta, block::value);
  out.log_lstar = obs.n * (ev.k0 - sr.s_hat * obs.y);

  switch (kind) {
    case ApproximationKind::ZerothOrder:
      out.log_p = 0.0;
      break;
    case ApproximationKind::Saddlepoint:
      out.log_p = neg_half_logdet_2pin(sr.hess_at_saddle, obs.n);
      break;
    case ApproximationKind::Exact: {
      const double p = exact_p_factor(model, theta, sr.s_hat, obs.n, quad);
      out.log_p = std::log(p);
      break;
    }
    default:
      break;
  }
  out.total = out.log_lstar + out.log_p;
  out.saddle = std::move(sr);
  return out;
}

namespace {

// Total theta-derivative of -0.5 log det(2 pi K0''(s_hat(theta;y);theta)),
// including the s_hat(theta) dependence through the saddle sensitivities.
RowVector grad_log_phat_along_theta(const CgfModel& model, const Vector& theta,
                                    const SaddleResult& sr) {
  const int p = model.signature().p;
  const int m = model.signature().m;
  CgfEvaluation ev = evaluate(model, sr.s_hat, theta,
                              block::hess_s | block::dhess_dtheta | block::dhess_ds);
  Eigen::LLT<Matrix> llt(ev.hess_s);
  RowVector out(p);
  for (int j = 0; j < p; ++j) {
    Matrix D = ev.dhess_dtheta[j];
    for (int i = 0; i < m; ++i) D += ev.dhess_ds[i] * sr.sens_theta(i, j);
    out[j] = -0.5 * llt.solve(D).trace();
  }
  return out;
}

RowVector grad_normal_approx(const CgfModel& model, const Vector& theta, const Observation& obs) {
  const int p = model.signature().p;
  RowVector zero = RowVector::Zero(model.signature().m);
  CgfEvaluation ev = evaluate(
      model, zero, theta, block::grad_s | block::hess_s | block::cross | block::dhess_dtheta);
  const Vector r = obs.x - obs.n * ev.grad_s;
  Eigen::LLT<Matrix> llt(obs.n * ev.hess_s);
  const Vector w = llt.solve(r);
  RowVector out(p);
  for (int j = 0; j < p; ++j) {
    const Matrix dC = obs.n * ev.dhess_dtheta[j];
    out[j] = obs.n * w.dot(ev.cross.col(j)) + 0.5 * w.dot(dC * w) -
             0.5 * llt.solve(dC).trace();
  }
  return out;
}

RowVector fd_grad_of_total(const CgfModel& model, const Vector& theta, const Observation& obs,
                           ApproximationKind kind, const QuadratureConfig& quad) {
  const int p = model.signature().p;
  RowVector g(p);
  for (int j = 0; j < p; ++j) {
    const double h = std::max(1e-6, 1e-6 * std::abs(theta[j]));
    Vector tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    g[j] = (log_likelihood(model, tp, obs, kind, quad).total -
            log_likelihood(model, tm, obs, kind, quad).total) /
           (2.0 * h);
  }
  return g;
}

}  // namespace

RowVector grad_log_likelihood(const CgfModel& model, const Vector& theta, const Observation& obs,
                              ApproximationKind kind, const QuadratureConfig& quad) {
  if (!model.theta_in_domain(theta)) throw DomainError("grad_log_likelihood: invalid theta");
  if (kind == ApproximationKind::NormalApprox) return grad_normal_approx(model, theta, obs);

  SaddleResult sr = solve_saddlepoint(model, theta, obs.y);
  CgfEvaluation ev = evaluate(model, sr.s_hat, theta, block::grad_theta);
  RowVector g = obs.n * ev.grad_theta;  // gradient of n log L*_0 at the saddle

  switch (kind) {
    case ApproximationKind::ZerothOrder:
      return g;
    case ApproximationKind::Saddlepoint:
      return g + grad_log_phat_along_theta(model, theta, sr);
    case ApproximationKind::Exact: {
      if (!model.capabilities().has_complex_theta_grad) {
        return fd_grad_of_total(model, theta, obs, kind, quad);
      }
      PIntegrals pi = exact_p_with_grad(model, theta, sr.s_hat, obs.n, quad);
      return g + (pi.dp_dtheta + pi.dp_ds * sr.sens_theta) / pi.p;
    }
    default:
      return g;
  }
}

}  // namespace saddlemax
