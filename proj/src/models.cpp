#include "saddlemax/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "saddlemax/special.hpp"

namespace saddlemax {
namespace models {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

double gauss_logpdf(double x, double mean, double var) {
  return -0.5 * (x - mean) * (x - mean) / var - 0.5 * std::log(2.0 * kPi * var);
}

bool is_integer(double x, double tol = 1e-9) { return std::abs(x - std::round(x)) < tol; }

// ---------------------------------------------------------------------------
// Poisson
// ---------------------------------------------------------------------------

class PoissonModel final : public CgfModel {
 public:
  PoissonModel() : sig_{1, 1, SupportKind::integer_lattice} {}

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    return theta.size() == 1 && theta[0] > 0.0;
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    return s.size() == 1 && theta_in_domain(theta) && std::isfinite(s[0]);
  }
  Capabilities capabilities() const override {
    Capabilities c;
    c.has_analytic_theta_derivs = true;
    c.has_complex_mgf = true;
    c.has_second_nu_derivs = true;
    c.has_closed_form_likelihood = true;
    c.has_branch_free_complex_k0 = true;
    c.has_complex_theta_grad = true;
    c.has_third_s_derivs = true;
    c.has_sampler = true;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const double th = theta[0];
    const double es = std::exp(s[0]);
    if (request & block::value) {
      out.k0 = th * (es - 1.0);
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s = Vector::Constant(1, th * es);
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = Matrix::Constant(1, 1, th * es);
      out.present |= block::hess_s;
    }
    if (request & block::grad_theta) {
      out.grad_theta = RowVector::Constant(1, es - 1.0);
      out.present |= block::grad_theta;
    }
    if (request & block::cross) {
      out.cross = Matrix::Constant(1, 1, es);
      out.present |= block::cross;
    }
    if (request & block::hess_theta) {
      out.hess_theta = Matrix::Zero(1, 1);
      out.present |= block::hess_theta;
    }
    if (request & block::dhess_dtheta) {
      out.dhess_dtheta = {Matrix::Constant(1, 1, es)};
      out.present |= block::dhess_dtheta;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds = {Matrix::Constant(1, 1, th * es)};
      out.present |= block::dhess_ds;
    }
    if (request & block::d2hess_dtheta2) {
      out.d2hess_dtheta2 = {{Matrix::Zero(1, 1)}};
      out.present |= block::d2hess_dtheta2;
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    const Complex z(s[0], phi[0]);
    const Complex ez = std::exp(z);
    const double th = theta[0];
    ComplexCgf out;
    out.k0 = th * (ez - 1.0);
    out.has_k0 = true;
    out.m0 = std::exp(out.k0);
    out.grad_s = ComplexVector::Constant(1, th * ez);
    out.grad_theta = ComplexRowVector::Constant(1, ez - 1.0);
    out.has_grad_theta = true;
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    if (!is_integer(x[0]) || x[0] < -0.5) return std::nullopt;
    const double k = std::round(x[0]);
    const double lam = n * theta[0];
    return k * std::log(lam) - lam - std::lgamma(k + 1.0);
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    return RowVector::Constant(1, x[0] / theta[0] - n);
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    std::poisson_distribution<long long> d(n * theta[0]);
    return Vector::Constant(1, static_cast<double>(d(rng)));
  }

 private:
  ModelSignature sig_;
};

// ---------------------------------------------------------------------------
// Gamma family (free (alpha,r), fi: alpha=theta r=1, pi: alpha=r=theta)
// ---------------------------------------------------------------------------

class GammaModel final : public CgfModel {
 public:
  explicit GammaModel(GammaVariant v)
      : variant_(v), sig_{1, v == GammaVariant::free_alpha_r ? 2 : 1, SupportKind::continuous} {}

  const ModelSignature& signature() const override { return sig_; }

  bool theta_in_domain(const Vector& theta) const override {
    if (theta.size() != sig_.p) return false;
    for (int i = 0; i < theta.size(); ++i) {
      if (!(theta[i] > 0.0)) return false;
    }
    return true;
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    return s.size() == 1 && theta_in_domain(theta) && s[0] < rate(theta);
  }
  Capabilities capabilities() const override {
    Capabilities c;
    c.has_analytic_theta_derivs = true;
    c.has_complex_mgf = true;
    c.has_second_nu_derivs = true;
    c.has_closed_form_likelihood = true;
    c.has_branch_free_complex_k0 = true;
    c.has_complex_theta_grad = true;
    c.has_third_s_derivs = true;
    c.has_sampler = true;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const double a = shape(theta);
    const double r = rate(theta);
    const double c = r - s[0];
    if (request & block::value) {
      out.k0 = a * (std::log(r) - std::log(c));
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s = Vector::Constant(1, a / c);
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = Matrix::Constant(1, 1, a / (c * c));
      out.present |= block::hess_s;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds = {Matrix::Constant(1, 1, 2.0 * a / (c * c * c))};
      out.present |= block::dhess_ds;
    }
    switch (variant_) {
      case GammaVariant::free_alpha_r: {
        if (request & block::grad_theta) {
          out.grad_theta.resize(2);
          out.grad_theta << std::log(r) - std::log(c), a / r - a / c;
          out.present |= block::grad_theta;
        }
        if (request & block::cross) {
          out.cross.resize(1, 2);
          out.cross << 1.0 / c, -a / (c * c);
          out.present |= block::cross;
        }
        if (request & block::hess_theta) {
          out.hess_theta.resize(2, 2);
          const double dar = 1.0 / r - 1.0 / c;
          out.hess_theta << 0.0, dar, dar, -a / (r * r) + a / (c * c);
          out.present |= block::hess_theta;
        }
        if (request & block::dhess_dtheta) {
          out.dhess_dtheta = {Matrix::Constant(1, 1, 1.0 / (c * c)),
                              Matrix::Constant(1, 1, -2.0 * a / (c * c * c))};
          out.present |= block::dhess_dtheta;
        }
        if (request & block::d2hess_dtheta2) {
          const Matrix daa = Matrix::Zero(1, 1);
          const Matrix dar = Matrix::Constant(1, 1, -2.0 / (c * c * c));
          const Matrix drr = Matrix::Constant(1, 1, 6.0 * a / (c * c * c * c));
          out.d2hess_dtheta2 = {{daa, dar}, {dar, drr}};
          out.present |= block::d2hess_dtheta2;
        }
        break;
      }
      case GammaVariant::fi: {
        if (request & block::grad_theta) {
          out.grad_theta = RowVector::Constant(1, -std::log(c));
          out.present |= block::grad_theta;
        }
        if (request & block::cross) {
          out.cross = Matrix::Constant(1, 1, 1.0 / c);
          out.present |= block::cross;
        }
        if (request & block::hess_theta) {
          out.hess_theta = Matrix::Zero(1, 1);
          out.present |= block::hess_theta;
        }
        if (request & block::dhess_dtheta) {
          out.dhess_dtheta = {Matrix::Constant(1, 1, 1.0 / (c * c))};
          out.present |= block::dhess_dtheta;
        }
        if (request & block::d2hess_dtheta2) {
          out.d2hess_dtheta2 = {{Matrix::Zero(1, 1)}};
          out.present |= block::d2hess_dtheta2;
        }
        break;
      }
      case GammaVariant::pi: {
        const double th = theta[0];
        if (request & block::grad_theta) {
          out.grad_theta =
              RowVector::Constant(1, std::log(th) + 1.0 - std::log(c) - th / c);
          out.present |= block::grad_theta;
        }
        if (request & block::cross) {
          out.cross = Matrix::Constant(1, 1, -s[0] / (c * c));
          out.present |= block::cross;
        }
        if (request & block::hess_theta) {
          out.hess_theta =
              Matrix::Constant(1, 1, 1.0 / th - 1.0 / c + s[0] / (c * c));
          out.present |= block::hess_theta;
        }
        if (request & block::dhess_dtheta) {
          out.dhess_dtheta = {Matrix::Constant(1, 1, -(th + s[0]) / (c * c * c))};
          out.present |= block::dhess_dtheta;
        }
        if (request & block::d2hess_dtheta2) {
          out.d2hess_dtheta2 = {
              {Matrix::Constant(1, 1, (2.0 * th + 4.0 * s[0]) / (c * c * c * c))}};
          out.present |= block::d2hess_dtheta2;
        }
        break;
      }
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    const double a = shape(theta);
    const double r = rate(theta);
    const Complex c = Complex(r - s[0], -phi[0]);  // r - z, Re > 0 on the domain
    ComplexCgf out;
    out.k0 = a * (std::log(r) - std::log(c));
    out.has_k0 = true;
    out.m0 = std::exp(out.k0);
    out.grad_s = ComplexVector::Constant(1, a / c);
    out.grad_theta.resize(sig_.p);
    switch (variant_) {
      case GammaVariant::free_alpha_r:
        out.grad_theta << std::log(r) - std::log(c), a / r - a / c;
        break;
      case GammaVariant::fi:
        out.grad_theta << -std::log(c);
        break;
      case GammaVariant::pi: {
        const double th = theta[0];
        out.grad_theta << std::log(th) + 1.0 - std::log(c) - th / c;
        break;
      }
    }
    out.has_grad_theta = true;
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    if (!(x[0] > 0.0)) return std::nullopt;
    const double a = n * shape(theta);
    const double r = rate(theta);
    return (a - 1.0) * std::log(x[0]) - r * x[0] + a * std::log(r) - std::lgamma(a);
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    const double lx = std::log(x[0]);
    switch (variant_) {
      case GammaVariant::fi:
        return RowVector::Constant(1, n * lx - n * digamma(n * theta[0]));
      case GammaVariant::pi: {
        const double th = theta[0];
        return RowVector::Constant(
            1, n * lx - x[0] + n * std::log(th) + n - n * digamma(n * th));
      }
      case GammaVariant::free_alpha_r: {
        RowVector g(2);
        const double a = theta[0], r = theta[1];
        g << n * lx + n * std::log(r) - n * digamma(n * a), -x[0] + n * a / r;
        return g;
      }
    }
    return std::nullopt;
  }

  std::optional<std::pair<RowVector, RowVector>> dual_box_hint(
      const Vector& theta) const override {
    return std::make_pair(RowVector::Constant(1, -kInf), RowVector::Constant(1, rate(theta)));
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    std::gamma_distribution<double> d(n * shape(theta), 1.0 / rate(theta));
    return Vector::Constant(1, d(rng));
  }

 private:
  double shape(const Vector& theta) const { return theta[0]; }
  double rate(const Vector& theta) const {
    switch (variant_) {
      case GammaVariant::free_alpha_r: return theta[1];
      case GammaVariant::fi: return 1.0;
      case GammaVariant::pi: return theta[0];
    }
    return 1.0;
  }

  GammaVariant variant_;
  ModelSignature sig_;
};

// ---------------------------------------------------------------------------
// Normal: Y ~ N(mu(theta), Sigma(theta))
// ---------------------------------------------------------------------------

class NormalModel final : public CgfModel {
 public:
  // Affine-mean constant-covariance constructor (fully analytic).
  NormalModel(const Matrix& M, const Vector& c, const Matrix& Sigma)
      : sig_{static_cast<int>(M.rows()), static_cast<int>(M.cols()), SupportKind::continuous} {
    maps_.m = sig_.m;
    maps_.p = sig_.p;
    maps_.mean = [M, c](const Vector& th) -> Vector { return M * th + c; };
    maps_.cov = [Sigma](const Vector&) -> Matrix { return Sigma; };
    maps_.mean_jac = [M](const Vector&) -> Matrix { return M; };
    const int p = sig_.p;
    const int m = sig_.m;
    maps_.cov_jac = [p, m](const Vector&) {
      return std::vector<Matrix>(p, Matrix::Zero(m, m));
    };
    affine_ = true;
  }

  explicit NormalModel(NormalMaps maps) : maps_(std::move(maps)) {
    sig_ = ModelSignature{maps_.m, maps_.p, SupportKind::continuous};
    affine_ = false;
  }

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    if (theta.size() != sig_.p) return false;
    if (maps_.theta_domain) return maps_.theta_domain(theta);
    return true;
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    return s.size() == sig_.m && theta_in_domain(theta) && s.allFinite();
  }
  Capabilities capabilities() const override {
    Capabilities c;
    const bool jac = static_cast<bool>(maps_.mean_jac) && static_cast<bool>(maps_.cov_jac);
    c.has_analytic_theta_derivs = jac;
    c.has_complex_mgf = true;
    c.has_second_nu_derivs = affine_;
    c.has_closed_form_likelihood = true;
    c.has_branch_free_complex_k0 = true;
    c.has_complex_theta_grad = jac;
    c.has_third_s_derivs = true;
    c.has_sampler = true;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const Vector mu = maps_.mean(theta);
    const Matrix Sigma = maps_.cov(theta);
    const int m = sig_.m, p = sig_.p;
    if (request & block::value) {
      out.k0 = (s * mu)(0) + 0.5 * (s * Sigma * s.transpose())(0);
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s = mu + Sigma * s.transpose();
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = Sigma;
      out.present |= block::hess_s;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds.assign(m, Matrix::Zero(m, m));
      out.present |= block::dhess_ds;
    }
    if (maps_.mean_jac && maps_.cov_jac) {
      const Matrix J = maps_.mean_jac(theta);
      const std::vector<Matrix> dS = maps_.cov_jac(theta);
      if (request & block::grad_theta) {
        out.grad_theta.resize(p);
        for (int j = 0; j < p; ++j) {
          out.grad_theta[j] = (s * J.col(j))(0) + 0.5 * (s * dS[j] * s.transpose())(0);
        }
        out.present |= block::grad_theta;
      }
      if (request & block::cross) {
        out.cross.resize(m, p);
        for (int j = 0; j < p; ++j) out.cross.col(j) = J.col(j) + dS[j] * s.transpose();
        out.present |= block::cross;
      }
      if (request & block::dhess_dtheta) {
        out.dhess_dtheta = dS;
        out.present |= block::dhess_dtheta;
      }
      if (affine_) {
        if (request & block::hess_theta) {
          out.hess_theta = Matrix::Zero(p, p);
          out.present |= block::hess_theta;
        }
        if (request & block::d2hess_dtheta2) {
          out.d2hess_dtheta2.assign(p, std::vector<Matrix>(p, Matrix::Zero(m, m)));
          out.present |= block::d2hess_dtheta2;
        }
      }
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    const Vector mu = maps_.mean(theta);
    const Matrix Sigma = maps_.cov(theta);
    ComplexRowVector z = s.cast<Complex>() + Complex(0.0, 1.0) * phi.cast<Complex>();
    ComplexCgf out;
    out.k0 = (z * mu.cast<Complex>())(0) + 0.5 * (z * Sigma.cast<Complex>() * z.transpose())(0);
    out.has_k0 = true;
    out.m0 = std::exp(out.k0);
    out.grad_s = mu.cast<Complex>() + Sigma.cast<Complex>() * z.transpose();
    if (maps_.mean_jac && maps_.cov_jac) {
      const Matrix J = maps_.mean_jac(theta);
      const std::vector<Matrix> dS = maps_.cov_jac(theta);
      out.grad_theta.resize(sig_.p);
      for (int j = 0; j < sig_.p; ++j) {
        out.grad_theta[j] = (z * J.col(j).cast<Complex>())(0) +
                            0.5 * (z * dS[j].cast<Complex>() * z.transpose())(0);
      }
      out.has_grad_theta = true;
    }
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    const Vector mu = n * maps_.mean(theta);
    const Matrix C = n * maps_.cov(theta);
    Eigen::LLT<Matrix> llt(C);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Vector r = x - mu;
    double logdet = 0.0;
    const Matrix L = llt.matrixL();
    for (int i = 0; i < C.rows(); ++i) logdet += 2.0 * std::log(L(i, i));
    return -0.5 * r.dot(llt.solve(r)) - 0.5 * (logdet + C.rows() * std::log(2.0 * kPi));
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    if (!maps_.mean_jac || !maps_.cov_jac) return std::nullopt;
    const Vector mu = n * maps_.mean(theta);
    const Matrix C = n * maps_.cov(theta);
    Eigen::LLT<Matrix> llt(C);
    const Vector w = llt.solve(x - mu);
    const Matrix J = maps_.mean_jac(theta);
    const std::vector<Matrix> dS = maps_.cov_jac(theta);
    RowVector g(sig_.p);
    for (int j = 0; j < sig_.p; ++j) {
      const Matrix dC = n * dS[j];
      g[j] = n * w.dot(J.col(j)) + 0.5 * w.dot(dC * w) - 0.5 * llt.solve(dC).trace();
    }
    return g;
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    const Vector mu = n * maps_.mean(theta);
    const Matrix C = n * maps_.cov(theta);
    Eigen::LLT<Matrix> llt(C);
    std::normal_distribution<double> nd(0.0, 1.0);
    Vector z(sig_.m);
    for (int i = 0; i < sig_.m; ++i) z[i] = nd(rng);
    return mu + Matrix(llt.matrixL()) * z;
  }

 private:
  ModelSignature sig_;
  NormalMaps maps_;
  bool affine_ = false;
};

// ---------------------------------------------------------------------------
// Normal with square: Y = (Z, Z^2), exponential family with
// rho0(w) = w1^2 / (-4 w2) - 0.5 log(-w2).
// ---------------------------------------------------------------------------

template <typename T>
struct Rho0Derivs {
  T v, d1, d2, d11, d12, d22, d111, d112, d122, d222;
};

template <typename T>
Rho0Derivs<T> rho0_derivs(T w1, T w2) {
  Rho0Derivs<T> r;
  const T u = -2.0 * w2;  // Re(u) > 0 on the domain
  const T iu = T(1.0) / u;
  r.v = w1 * w1 * iu * 0.5 - 0.5 * std::log(u * 0.5);
  r.d1 = w1 * iu;
  r.d2 = w1 * w1 * iu * iu + iu;
  r.d11 = iu;
  r.d12 = 2.0 * w1 * iu * iu;
  r.d22 = 4.0 * w1 * w1 * iu * iu * iu + 2.0 * iu * iu;
  r.d111 = T(0.0);
  r.d112 = 2.0 * iu * iu;
  r.d122 = 8.0 * w1 * iu * iu * iu;
  r.d222 = 24.0 * w1 * w1 * iu * iu * iu * iu + 8.0 * iu * iu * iu;
  return r;
}

class NormalWithSquareModel final : public CgfModel {
 public:
  NormalWithSquareModel() : sig_{2, 2, SupportKind::continuous} {}

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    return theta.size() == 2 && theta[1] > 0.0;
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    if (s.size() != 2 || !theta_in_domain(theta)) return false;
    const double eta2 = -0.5 / theta[1];
    return s[1] < -eta2 && s.allFinite();
  }
  Capabilities capabilities() const override {
    Capabilities c;
    c.has_analytic_theta_derivs = true;
    c.has_complex_mgf = true;
    c.has_closed_form_likelihood = true;
    c.has_branch_free_complex_k0 = true;
    c.has_complex_theta_grad = true;
    c.has_third_s_derivs = true;
    c.has_sampler = true;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const double mu = theta[0], v = theta[1];
    const double eta1 = mu / v, eta2 = -0.5 / v;
    const auto re = rho0_derivs<double>(eta1, eta2);
    const auto rw = rho0_derivs<double>(eta1 + s[0], eta2 + s[1]);
    // J(a,j) = d eta_a / d theta_j
    Matrix J(2, 2);
    J << 1.0 / v, -mu / (v * v), 0.0, 0.5 / (v * v);
    if (request & block::value) {
      out.k0 = rw.v - re.v;
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s.resize(2);
      out.grad_s << rw.d1, rw.d2;
      out.present |= block::grad_s;
    }
    Matrix Hw(2, 2);
    Hw << rw.d11, rw.d12, rw.d12, rw.d22;
    if (request & block::hess_s) {
      out.hess_s = Hw;
      out.present |= block::hess_s;
    }
    if (request & block::grad_theta) {
      RowVector diff(2);
      diff << rw.d1 - re.d1, rw.d2 - re.d2;
      out.grad_theta = diff * J;
      out.present |= block::grad_theta;
    }
    if (request & block::cross) {
      out.cross = Hw * J;
      out.present |= block::cross;
    }
    if (request & block::hess_theta) {
      Matrix He(2, 2);
      He << re.d11, re.d12, re.d12, re.d22;
      Matrix H = J.transpose() * (Hw - He) * J;
      // second derivatives of eta(theta)
      Matrix H_eta1(2, 2), H_eta2(2, 2);
      H_eta1 << 0.0, -1.0 / (v * v), -1.0 / (v * v), 2.0 * mu / (v * v * v);
      H_eta2 << 0.0, 0.0, 0.0, -1.0 / (v * v * v);
      H += (rw.d1 - re.d1) * H_eta1 + (rw.d2 - re.d2) * H_eta2;
      out.hess_theta = H;
      out.present |= block::hess_theta;
    }
    Matrix T1(2, 2), T2(2, 2);  // d Hess / d w1, d Hess / d w2
    T1 << rw.d111, rw.d112, rw.d112, rw.d122;
    T2 << rw.d112, rw.d122, rw.d122, rw.d222;
    if (request & block::dhess_dtheta) {
      out.dhess_dtheta.resize(2);
      for (int j = 0; j < 2; ++j) out.dhess_dtheta[j] = T1 * J(0, j) + T2 * J(1, j);
      out.present |= block::dhess_dtheta;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds = {T1, T2};
      out.present |= block::dhess_ds;
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    const double mu = theta[0], v = theta[1];
    const double eta1 = mu / v, eta2 = -0.5 / v;
    const auto re = rho0_derivs<double>(eta1, eta2);
    const Complex w1(eta1 + s[0], phi[0]);
    const Complex w2(eta2 + s[1], phi[1]);
    const auto rw = rho0_derivs<Complex>(w1, w2);
    Matrix J(2, 2);
    J << 1.0 / v, -mu / (v * v), 0.0, 0.5 / (v * v);
    ComplexCgf out;
    out.k0 = rw.v - re.v;
    out.has_k0 = true;
    out.m0 = std::exp(out.k0);
    out.grad_s.resize(2);
    out.grad_s << rw.d1, rw.d2;
    out.grad_theta.resize(2);
    for (int j = 0; j < 2; ++j) {
      out.grad_theta[j] = (rw.d1 - re.d1) * J(0, j) + (rw.d2 - re.d2) * J(1, j);
    }
    out.has_grad_theta = true;
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    if (!is_integer(n) || n < 2.0) return std::nullopt;
    const double mu = theta[0], v = theta[1];
    const double g = x[1] - x[0] * x[0] / n;
    if (!(g > 0.0)) return std::nullopt;
    const double shape = 0.5 * (n - 1.0);
    const double rate = 0.5 / v;
    return gauss_logpdf(x[0], n * mu, n * v) + (shape - 1.0) * std::log(g) - rate * g +
           shape * std::log(rate) - std::lgamma(shape);
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    const double mu = theta[0], v = theta[1];
    const double g = x[1] - x[0] * x[0] / n;
    if (!(g > 0.0)) return std::nullopt;
    RowVector out(2);
    out[0] = (x[0] - n * mu) / v;
    out[1] = (x[0] - n * mu) * (x[0] - n * mu) / (2.0 * n * v * v) - 0.5 / v +
             g / (2.0 * v * v) - (n - 1.0) / (2.0 * v);
    return out;
  }

  std::optional<std::pair<RowVector, RowVector>> dual_box_hint(
      const Vector& theta) const override {
    RowVector lo(2), hi(2);
    lo << -kInf, -kInf;
    hi << kInf, 0.5 / theta[1];
    return std::make_pair(lo, hi);
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    if (!is_integer(n)) throw NotSupportedError("normal_square sampler needs integer n");
    std::normal_distribution<double> nd(theta[0], std::sqrt(theta[1]));
    double s1 = 0.0, s2 = 0.0;
    for (long long i = 0; i < static_cast<long long>(std::round(n)); ++i) {
      const double z = nd(rng);
      s1 += z;
      s2 += z * z;
    }
    Vector x(2);
    x << s1, s2;
    return x;
  }

 private:
  ModelSignature sig_;
};

// ---------------------------------------------------------------------------
// Birth-death transition law: modified Geometric summands.
// ---------------------------------------------------------------------------

struct AlphaQ {
  double alpha, q;
  double da_dw, da_dn, dq_dw, dq_dn;  // derivatives w.r.t. omega and nu
};

AlphaQ alpha_q_full(double omega, double nu, double t) {
  AlphaQ r{};
  const double lam = 0.5 * (nu + omega);
  const double mu = 0.5 * (nu - omega);
  if (std::abs(omega) * t < 1e-6) {
    // Series branch at the removable singularity omega = 0.
    const double x = omega * t;
    const double P = 1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0;
    const double dP = t * (0.5 + x / 3.0 + x * x / 8.0);
    const double den = 1.0 + lam * t * P;
    r.alpha = mu * t * P / den;
    r.q = lam * t * P / den;
    const double dden_dw = 0.5 * t * P + lam * t * dP;
    const double dden_dn = 0.5 * t * P;
    r.da_dw = (-0.5 * t * P + mu * t * dP) / den - mu * t * P * dden_dw / (den * den);
    r.da_dn = 0.5 * t * P / den - mu * t * P * dden_dn / (den * den);
    r.dq_dw = (0.5 * t * P + lam * t * dP) / den - lam * t * P * dden_dw / (den * den);
    r.dq_dn = 0.5 * t * P / den - lam * t * P * dden_dn / (den * den);
    return r;
  }
  const double E = std::exp(omega * t);
  const double Em1 = std::expm1(omega * t);
  const double D = lam * E - mu;
  const double Dw = 0.5 * E + lam * t * E + 0.5;
  const double Dn = 0.5 * E - 0.5;
  const double Na = mu * Em1, Nq = lam * Em1;
  const double Naw = -0.5 * Em1 + mu * t * E;
  const double Nan = 0.5 * Em1;
  const double Nqw = 0.5 * Em1 + lam * t * E;
  const double Nqn = 0.5 * Em1;
  r.alpha = Na / D;
  r.q = Nq / D;
  r.da_dw = (Naw * D - Na * Dw) / (D * D);
  r.da_dn = (Nan * D - Na * Dn) / (D * D);
  r.dq_dw = (Nqw * D - Nq * Dw) / (D * D);
  r.dq_dn = (Nqn * D - Nq * Dn) / (D * D);
  return r;
}

class BirthDeathModel final : public CgfModel {
 public:
  explicit BirthDeathModel(double t) : t_(t), sig_{1, 2, SupportKind::integer_lattice} {
    if (!(t > 0.0)) throw DomainError("birth_death: t must be positive");
  }

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    return theta.size() == 2 && theta[1] > 0.0 && std::abs(theta[0]) < theta[1];
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    if (s.size() != 1 || !theta_in_domain(theta)) return false;
    const AlphaQ aq = alpha_q_full(theta[0], theta[1], t_);
    return s[0] < -std::log(aq.q);
  }
  Capabilities capabilities() const override {
    Capabilities c;
    c.has_analytic_theta_derivs = true;  // first-order blocks; higher blocks FD-filled
    c.has_complex_mgf = true;
    c.has_complex_theta_grad = true;
    c.has_sampler = true;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const AlphaQ aq = alpha_q_full(theta[0], theta[1], t_);
    const double es = std::exp(s[0]);
    const double b = 1.0 - aq.q - aq.alpha;
    const double G = aq.alpha + b * es;
    const double D2 = 1.0 - aq.q * es;
    if (request & block::value) {
      out.k0 = std::log(G) - std::log(D2);
      out.present |= block::value;
    }
    const double u = b * es / G;   // first piece of K0'
    const double w = aq.q * es / D2;
    if (request & block::grad_s) {
      out.grad_s = Vector::Constant(1, u + w);
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = Matrix::Constant(1, 1, u - u * u + w + w * w);
      out.present |= block::hess_s;
    }
    const double dk_da = (1.0 - es) / G;
    const double dk_dq = -es / G + es / D2;
    if (request & block::grad_theta) {
      out.grad_theta.resize(2);
      out.grad_theta << dk_da * aq.da_dw + dk_dq * aq.dq_dw,
          dk_da * aq.da_dn + dk_dq * aq.dq_dn;
      out.present |= block::grad_theta;
    }
    if (request & block::cross) {
      const double dg_da = -es / G - b * es * (1.0 - es) / (G * G);
      const double dg_dq = -es / G + b * es * es / (G * G) + es / D2 + aq.q * es * es / (D2 * D2);
      out.cross.resize(1, 2);
      out.cross << dg_da * aq.da_dw + dg_dq * aq.dq_dw, dg_da * aq.da_dn + dg_dq * aq.dq_dn;
      out.present |= block::cross;
    }
    // hess_theta, dhess_dtheta, dhess_ds, d2hess: FD-filled by evaluate().
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    const AlphaQ aq = alpha_q_full(theta[0], theta[1], t_);
    const Complex ez = std::exp(Complex(s[0], phi[0]));
    const double b = 1.0 - aq.q - aq.alpha;
    const Complex G = aq.alpha + b * ez;
    const Complex D2 = 1.0 - aq.q * ez;
    ComplexCgf out;
    out.m0 = G / D2;
    out.grad_s = ComplexVector::Constant(1, b * ez / G + aq.q * ez / D2);
    const Complex dk_da = (1.0 - ez) / G;
    const Complex dk_dq = -ez / G + ez / D2;
    out.grad_theta.resize(2);
    out.grad_theta << dk_da * aq.da_dw + dk_dq * aq.dq_dw, dk_da * aq.da_dn + dk_dq * aq.dq_dn;
    out.has_grad_theta = true;
    return out;
  }

  std::optional<std::pair<RowVector, RowVector>> dual_box_hint(
      const Vector& theta) const override {
    const AlphaQ aq = alpha_q_full(theta[0], theta[1], t_);
    return std::make_pair(RowVector::Constant(1, -kInf),
                          RowVector::Constant(1, -std::log(aq.q)));
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    if (!is_integer(n)) throw NotSupportedError("birth_death sampler needs integer n");
    const AlphaQ aq = alpha_q_full(theta[0], theta[1], t_);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::geometric_distribution<long long> geo(1.0 - aq.q);
    long long total = 0;
    for (long long i = 0; i < static_cast<long long>(std::round(n)); ++i) {
      if (unif(rng) >= aq.alpha) total += 1 + geo(rng);
    }
    return Vector::Constant(1, static_cast<double>(total));
  }

 private:
  double t_;
  ModelSignature sig_;
};

// ---------------------------------------------------------------------------
// Mixture failure mode: Y = 0.5 exp(-theta^2) Z + B with B = +-1.
// ---------------------------------------------------------------------------

class MixtureNormalModel final : public CgfModel {
 public:
  MixtureNormalModel() : sig_{1, 1, SupportKind::continuous} {}

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    return theta.size() == 1 && std::isfinite(theta[0]);
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    return s.size() == 1 && theta_in_domain(theta) && std::isfinite(s[0]);
  }
  Capabilities capabilities() const override {
    Capabilities c;
    c.has_analytic_theta_derivs = true;
    c.has_complex_mgf = true;
    c.has_second_nu_derivs = true;
    c.has_closed_form_likelihood = true;  // direct mixture sum, n <= 64
    c.has_complex_theta_grad = true;
    c.has_third_s_derivs = true;
    c.has_sampler = true;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const double th = theta[0];
    const double v = 0.25 * std::exp(-2.0 * th * th);
    const double vp = -4.0 * th * v;
    const double vpp = (16.0 * th * th - 4.0) * v;
    const double x = s[0];
    const double tanh_x = std::tanh(x);
    const double sech2 = 1.0 - tanh_x * tanh_x;
    if (request & block::value) {
      out.k0 = 0.5 * v * x * x + std::log(std::cosh(x));
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s = Vector::Constant(1, v * x + tanh_x);
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = Matrix::Constant(1, 1, v + sech2);
      out.present |= block::hess_s;
    }
    if (request & block::grad_theta) {
      out.grad_theta = RowVector::Constant(1, 0.5 * x * x * vp);
      out.present |= block::grad_theta;
    }
    if (request & block::cross) {
      out.cross = Matrix::Constant(1, 1, vp * x);
      out.present |= block::cross;
    }
    if (request & block::hess_theta) {
      out.hess_theta = Matrix::Constant(1, 1, 0.5 * x * x * vpp);
      out.present |= block::hess_theta;
    }
    if (request & block::dhess_dtheta) {
      out.dhess_dtheta = {Matrix::Constant(1, 1, vp)};
      out.present |= block::dhess_dtheta;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds = {Matrix::Constant(1, 1, -2.0 * sech2 * tanh_x)};
      out.present |= block::dhess_ds;
    }
    if (request & block::d2hess_dtheta2) {
      out.d2hess_dtheta2 = {{Matrix::Constant(1, 1, vpp)}};
      out.present |= block::d2hess_dtheta2;
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    const double th = theta[0];
    const double v = 0.25 * std::exp(-2.0 * th * th);
    const double vp = -4.0 * th * v;
    const Complex z(s[0], phi[0]);
    ComplexCgf out;
    out.m0 = std::exp(0.5 * v * z * z) * std::cosh(z);
    out.grad_s = ComplexVector::Constant(1, v * z + std::tanh(z));
    out.grad_theta = ComplexRowVector::Constant(1, 0.5 * z * z * vp);
    out.has_grad_theta = true;
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    if (!is_integer(n) || n > 64.0) return std::nullopt;
    const long long ni = static_cast<long long>(std::round(n));
    const double v = 0.25 * std::exp(-2.0 * theta[0] * theta[0]);
    std::vector<double> terms(ni + 1);
    for (long long j = 0; j <= ni; ++j) {
      const double logc = std::lgamma(ni + 1.0) - std::lgamma(j + 1.0) -
                          std::lgamma(ni - j + 1.0) - ni * std::log(2.0);
      terms[j] = logc + gauss_logpdf(x[0], static_cast<double>(ni - 2 * j), n * v);
    }
    return log_sum_exp(terms.data(), static_cast<int>(terms.size()));
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    if (!is_integer(n) || n > 64.0) return std::nullopt;
    const long long ni = static_cast<long long>(std::round(n));
    const double th = theta[0];
    const double v = 0.25 * std::exp(-2.0 * th * th);
    const double V = n * v;
    const double dV = n * (-4.0 * th * v);
    std::vector<double> terms(ni + 1);
    std::vector<double> dlog(ni + 1);
    for (long long j = 0; j <= ni; ++j) {
      const double logc = std::lgamma(ni + 1.0) - std::lgamma(j + 1.0) -
                          std::lgamma(ni - j + 1.0) - ni * std::log(2.0);
      const double mean = static_cast<double>(ni - 2 * j);
      terms[j] = logc + gauss_logpdf(x[0], mean, V);
      dlog[j] = ((x[0] - mean) * (x[0] - mean) / V - 1.0) / (2.0 * V) * dV;
    }
    const double lse = log_sum_exp(terms.data(), static_cast<int>(terms.size()));
    double g = 0.0;
    for (long long j = 0; j <= ni; ++j) g += std::exp(terms[j] - lse) * dlog[j];
    return RowVector::Constant(1, g);
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    if (!is_integer(n)) throw NotSupportedError("mixture sampler needs integer n");
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double c = 0.5 * std::exp(-theta[0] * theta[0]);
    double acc = 0.0;
    for (long long i = 0; i < static_cast<long long>(std::round(n)); ++i) {
      acc += c * nd(rng) + (unif(rng) < 0.5 ? 1.0 : -1.0);
    }
    return Vector::Constant(1, acc);
  }

 private:
  ModelSignature sig_;
};

// ---------------------------------------------------------------------------
// Linear map combinator: X = A U + b per summand.
// ---------------------------------------------------------------------------

class LinearMapModel final : public CgfModel {
 public:
  LinearMapModel(Matrix A, ModelPtr latent, Vector shift)
      : A_(std::move(A)), latent_(std::move(latent)) {
    const int m = static_cast<int>(A_.rows());
    const int k = static_cast<int>(A_.cols());
    if (latent_->signature().m != k) throw DomainError("compose_linear: dimension mismatch");
    Eigen::JacobiSVD<Matrix> svd(A_);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-10 * sv(0)) {
      throw RankDeficientError("compose_linear: A is not of full row rank");
    }
    shift_ = shift.size() == 0 ? Vector::Zero(m) : std::move(shift);
    if (shift_.size() != m) throw DomainError("compose_linear: shift has wrong dimension");
    sig_ = ModelSignature{m, latent_->signature().p, latent_->signature().support};
    if (sig_.support == SupportKind::integer_lattice) {
      bool integral = true;
      for (int i = 0; i < A_.size() && integral; ++i) integral = is_integer(A_(i));
      for (int i = 0; i < shift_.size() && integral; ++i) integral = is_integer(shift_[i]);
      if (!integral) sig_.support = SupportKind::continuous;
    }
  }

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    return latent_->theta_in_domain(theta);
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    if (s.size() != sig_.m) return false;
    return latent_->in_domain(s * A_, theta);
  }
  Capabilities capabilities() const override {
    Capabilities c = latent_->capabilities();
    const bool invertible = A_.rows() == A_.cols();
    c.has_closed_form_likelihood = c.has_closed_form_likelihood && invertible;
    return c;
  }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const RowVector t = s * A_;
    const int m = sig_.m, p = sig_.p;
    // Let the latent fill FD fallbacks for its own missing blocks.
    CgfEvaluation lat = evaluate(*latent_, t, theta, request);
    out.fd_blocks |= lat.fd_blocks;
    if (request & block::value) {
      out.k0 = lat.k0 + (s * shift_)(0);
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s = A_ * lat.grad_s + shift_;
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = A_ * lat.hess_s * A_.transpose();
      out.present |= block::hess_s;
    }
    if (request & block::grad_theta) {
      out.grad_theta = lat.grad_theta;
      out.present |= block::grad_theta;
    }
    if (request & block::cross) {
      out.cross = A_ * lat.cross;
      out.present |= block::cross;
    }
    if (request & block::hess_theta) {
      out.hess_theta = lat.hess_theta;
      out.present |= block::hess_theta;
    }
    if (request & block::dhess_dtheta) {
      out.dhess_dtheta.resize(p);
      for (int j = 0; j < p; ++j) {
        out.dhess_dtheta[j] = A_ * lat.dhess_dtheta[j] * A_.transpose();
      }
      out.present |= block::dhess_dtheta;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds.assign(m, Matrix::Zero(m, m));
      const int k = static_cast<int>(A_.cols());
      for (int i = 0; i < m; ++i) {
        Matrix inner = Matrix::Zero(k, k);
        for (int a = 0; a < k; ++a) inner += lat.dhess_ds[a] * A_(i, a);
        out.dhess_ds[i] = A_ * inner * A_.transpose();
      }
      out.present |= block::dhess_ds;
    }
    if (request & block::d2hess_dtheta2) {
      out.d2hess_dtheta2.assign(p, std::vector<Matrix>(p));
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          out.d2hess_dtheta2[i][j] = A_ * lat.d2hess_dtheta2[i][j] * A_.transpose();
        }
      }
      out.present |= block::d2hess_dtheta2;
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    ComplexCgf lat = latent_->eval_complex(s * A_, phi * A_, theta);
    const Complex shift_term((s * shift_)(0), (phi * shift_)(0));
    ComplexCgf out;
    out.m0 = lat.m0 * std::exp(shift_term);
    if (lat.has_k0) {
      out.k0 = lat.k0 + shift_term;
      out.has_k0 = true;
    }
    out.grad_s = A_.cast<Complex>() * lat.grad_s + shift_.cast<Complex>();
    if (lat.has_grad_theta) {
      out.grad_theta = lat.grad_theta;
      out.has_grad_theta = true;
    }
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    if (A_.rows() != A_.cols()) return std::nullopt;
    const Vector u = A_.partialPivLu().solve(x - n * shift_);
    auto base = latent_->closed_form_log_density(theta, u, n);
    if (!base) return std::nullopt;
    return *base - std::log(std::abs(A_.determinant()));
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    if (A_.rows() != A_.cols()) return std::nullopt;
    const Vector u = A_.partialPivLu().solve(x - n * shift_);
    return latent_->closed_form_grad_log_density(theta, u, n);
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    return A_ * latent_->sample(theta, n, rng) + n * shift_;
  }

 private:
  Matrix A_;
  ModelPtr latent_;
  Vector shift_;
  ModelSignature sig_;
};

// ---------------------------------------------------------------------------
// Concatenation combinator: K0(s) = sum_j beta_j K0_base(s_j).
// ---------------------------------------------------------------------------

class ConcatModel final : public CgfModel {
 public:
  ConcatModel(ModelPtr base, Vector beta) : base_(std::move(base)), beta_(std::move(beta)) {
    for (int j = 0; j < beta_.size(); ++j) {
      if (!(beta_[j] > 0.0)) throw DomainError("compose_concat: beta must be positive");
    }
    k_ = static_cast<int>(beta_.size());
    m0_ = base_->signature().m;
    sig_ = ModelSignature{k_ * m0_, base_->signature().p, base_->signature().support};
  }

  const ModelSignature& signature() const override { return sig_; }
  bool theta_in_domain(const Vector& theta) const override {
    return base_->theta_in_domain(theta);
  }
  bool in_domain(const RowVector& s, const Vector& theta) const override {
    if (s.size() != sig_.m) return false;
    for (int j = 0; j < k_; ++j) {
      if (!base_->in_domain(s.segment(j * m0_, m0_), theta)) return false;
    }
    return true;
  }
  Capabilities capabilities() const override { return base_->capabilities(); }

  void eval_analytic(const RowVector& s, const Vector& theta, unsigned request,
                     CgfEvaluation& out) const override {
    const int m = sig_.m, p = sig_.p;
    unsigned base_req = request;
    if (request & (block::grad_theta | block::hess_theta)) base_req |= block::value;
    std::vector<CgfEvaluation> evs(k_);
    for (int j = 0; j < k_; ++j) {
      evs[j] = evaluate(*base_, s.segment(j * m0_, m0_), theta, base_req);
      out.fd_blocks |= evs[j].fd_blocks;
    }
    if (request & block::value) {
      out.k0 = 0.0;
      for (int j = 0; j < k_; ++j) out.k0 += beta_[j] * evs[j].k0;
      out.present |= block::value;
    }
    if (request & block::grad_s) {
      out.grad_s.resize(m);
      for (int j = 0; j < k_; ++j) out.grad_s.segment(j * m0_, m0_) = beta_[j] * evs[j].grad_s;
      out.present |= block::grad_s;
    }
    if (request & block::hess_s) {
      out.hess_s = Matrix::Zero(m, m);
      for (int j = 0; j < k_; ++j) {
        out.hess_s.block(j * m0_, j * m0_, m0_, m0_) = beta_[j] * evs[j].hess_s;
      }
      out.present |= block::hess_s;
    }
    if (request & block::grad_theta) {
      out.grad_theta = RowVector::Zero(p);
      for (int j = 0; j < k_; ++j) out.grad_theta += beta_[j] * evs[j].grad_theta;
      out.present |= block::grad_theta;
    }
    if (request & block::cross) {
      out.cross = Matrix::Zero(m, p);
      for (int j = 0; j < k_; ++j) {
        out.cross.block(j * m0_, 0, m0_, p) = beta_[j] * evs[j].cross;
      }
      out.present |= block::cross;
    }
    if (request & block::hess_theta) {
      out.hess_theta = Matrix::Zero(p, p);
      for (int j = 0; j < k_; ++j) out.hess_theta += beta_[j] * evs[j].hess_theta;
      out.present |= block::hess_theta;
    }
    if (request & block::dhess_dtheta) {
      out.dhess_dtheta.assign(p, Matrix::Zero(m, m));
      for (int jp = 0; jp < p; ++jp) {
        for (int j = 0; j < k_; ++j) {
          out.dhess_dtheta[jp].block(j * m0_, j * m0_, m0_, m0_) =
              beta_[j] * evs[j].dhess_dtheta[jp];
        }
      }
      out.present |= block::dhess_dtheta;
    }
    if (request & block::dhess_ds) {
      out.dhess_ds.assign(m, Matrix::Zero(m, m));
      for (int j = 0; j < k_; ++j) {
        for (int a = 0; a < m0_; ++a) {
          out.dhess_ds[j * m0_ + a].block(j * m0_, j * m0_, m0_, m0_) =
              beta_[j] * evs[j].dhess_ds[a];
        }
      }
      out.present |= block::dhess_ds;
    }
    if (request & block::d2hess_dtheta2) {
      out.d2hess_dtheta2.assign(p, std::vector<Matrix>(p, Matrix::Zero(m, m)));
      for (int i = 0; i < p; ++i) {
        for (int jp = 0; jp < p; ++jp) {
          for (int j = 0; j < k_; ++j) {
            out.d2hess_dtheta2[i][jp].block(j * m0_, j * m0_, m0_, m0_) =
                beta_[j] * evs[j].d2hess_dtheta2[i][jp];
          }
        }
      }
      out.present |= block::d2hess_dtheta2;
    }
  }

  ComplexCgf eval_complex(const RowVector& s, const RowVector& phi,
                          const Vector& theta) const override {
    ComplexCgf out;
    out.grad_s.resize(sig_.m);
    out.grad_theta = ComplexRowVector::Zero(sig_.p);
    out.has_grad_theta = true;
    Complex k0_sum(0.0, 0.0);
    Complex m0_prod(1.0, 0.0);
    bool all_k0 = true;
    for (int j = 0; j < k_; ++j) {
      ComplexCgf bj = base_->eval_complex(s.segment(j * m0_, m0_), phi.segment(j * m0_, m0_),
                                          theta);
      out.grad_s.segment(j * m0_, m0_) = beta_[j] * bj.grad_s;
      if (bj.has_grad_theta) {
        out.grad_theta += beta_[j] * bj.grad_theta;
      } else {
        out.has_grad_theta = false;
      }
      if (bj.has_k0) {
        k0_sum += beta_[j] * bj.k0;
      } else {
        all_k0 = false;
        if (!is_integer(beta_[j])) {
          throw NotSupportedError(
              "compose_concat: non-integer beta with branch-dependent base complex K0");
        }
        Complex acc(1.0, 0.0);
        for (long long e = 0; e < static_cast<long long>(std::round(beta_[j])); ++e) {
          acc *= bj.m0;
        }
        m0_prod *= acc;
      }
    }
    if (all_k0) {
      out.k0 = k0_sum;
      out.has_k0 = true;
      out.m0 = std::exp(k0_sum);
    } else {
      out.m0 = m0_prod * std::exp(k0_sum);
    }
    return out;
  }

  std::optional<double> closed_form_log_density(const Vector& theta, const Vector& x,
                                                double n) const override {
    double acc = 0.0;
    for (int j = 0; j < k_; ++j) {
      auto b = base_->closed_form_log_density(theta, x.segment(j * m0_, m0_), n * beta_[j]);
      if (!b) return std::nullopt;
      acc += *b;
    }
    return acc;
  }
  std::optional<RowVector> closed_form_grad_log_density(const Vector& theta, const Vector& x,
                                                        double n) const override {
    RowVector acc = RowVector::Zero(sig_.p);
    for (int j = 0; j < k_; ++j) {
      auto b = base_->closed_form_grad_log_density(theta, x.segment(j * m0_, m0_), n * beta_[j]);
      if (!b) return std::nullopt;
      acc += *b;
    }
    return acc;
  }

  std::optional<std::pair<RowVector, RowVector>> dual_box_hint(
      const Vector& theta) const override {
    auto base_box = base_->dual_box_hint(theta);
    if (!base_box) return std::nullopt;
    RowVector lo(sig_.m), hi(sig_.m);
    for (int j = 0; j < k_; ++j) {
      lo.segment(j * m0_, m0_) = base_box->first;
      hi.segment(j * m0_, m0_) = base_box->second;
    }
    return std::make_pair(lo, hi);
  }

  Vector sample(const Vector& theta, double n, std::mt19937_64& rng) const override {
    Vector x(sig_.m);
    for (int j = 0; j < k_; ++j) {
      x.segment(j * m0_, m0_) = base_->sample(theta, n * beta_[j], rng);
    }
    return x;
  }

 private:
  ModelPtr base_;
  Vector beta_;
  int k_ = 0, m0_ = 0;
  ModelSignature sig_;
};

}  // namespace

ModelPtr poisson() { return std::make_shared<PoissonModel>(); }

ModelPtr gamma_model(GammaVariant variant) { return std::make_shared<GammaModel>(variant); }

ModelPtr normal_affine(const Matrix& M, const Vector& c, const Matrix& Sigma) {
  return std::make_shared<NormalModel>(M, c, Sigma);
}

ModelPtr normal_general(NormalMaps maps) {
  return std::make_shared<NormalModel>(std::move(maps));
}

ModelPtr normal_with_square() { return std::make_shared<NormalWithSquareModel>(); }

ModelPtr birth_death(double t) { return std::make_shared<BirthDeathModel>(t); }

std::pair<double, double> birthdeath_alpha_q(double omega, double nu, double t) {
  if (!(nu > 0.0) || !(std::abs(omega) < nu) || !(t > 0.0)) {
    throw DomainError("birthdeath_alpha_q: need -nu < omega < nu and t > 0");
  }
  const AlphaQ aq = alpha_q_full(omega, nu, t);
  return {aq.alpha, aq.q};
}

ModelPtr mixture_normal() { return std::make_shared<MixtureNormalModel>(); }

ModelPtr compose_linear(const Matrix& A, ModelPtr latent, const Vector& shift) {
  return std::make_shared<LinearMapModel>(A, std::move(latent), shift);
}

ModelPtr compose_concat(ModelPtr base, const Vector& beta) {
  return std::make_shared<ConcatModel>(std::move(base), beta);
}

std::optional<double> closed_form_log_density(const CgfModel& model, const Vector& theta,
                                              const Vector& x, double n) {
  if (!model.capabilities().has_closed_form_likelihood) {
    throw NotSupportedError("model has no closed-form likelihood");
  }
  return model.closed_form_log_density(theta, x, n);
}

std::pair<ModelPtr, Vector> make_model(const std::string& id,
                                       const std::map<std::string, double>& params) {
  auto get = [&params](const std::string& key) {
    auto it = params.find(key);
    if (it == params.end()) throw DomainError("make_model: missing parameter " + key);
    return it->second;
  };
  auto get_or = [&params](const std::string& key, double defv) {
    auto it = params.find(key);
    return it == params.end() ? defv : it->second;
  };

  ModelPtr model;
  Vector theta;
  if (id == "poisson") {
    model = poisson();
    theta = Vector::Constant(1, params.count("theta") ? get("theta") : get("lambda"));
  } else if (id == "gamma") {
    model = gamma_model(GammaVariant::free_alpha_r);
    theta.resize(2);
    theta << get("alpha"), get("r");
  } else if (id == "gamma_fi") {
    model = gamma_model(GammaVariant::fi);
    theta = Vector::Constant(1, get("theta"));
  } else if (id == "gamma_pi") {
    model = gamma_model(GammaVariant::pi);
    theta = Vector::Constant(1, get("theta"));
  } else if (id == "normal") {
    const double sigma2 = get_or("sigma2", 1.0);
    model = normal_affine(Matrix::Identity(1, 1), Vector::Zero(1),
                          Matrix::Constant(1, 1, sigma2));
    theta = Vector::Constant(1, get("theta"));
  } else if (id == "normal_square") {
    model = normal_with_square();
    theta.resize(2);
    theta << get("mu"), get("sigma2");
  } else if (id == "birth_death") {
    model = birth_death(get("t"));
    theta.resize(2);
    theta << get("omega"), get("nu");
  } else if (id == "mixture_normal") {
    model = mixture_normal();
    theta = Vector::Constant(1, get("theta"));
  } else {
    throw DomainError("make_model: unknown model id '" + id + "'");
  }

  const double k = get_or("k", 1.0);
  if (k > 1.5) {
    model = compose_concat(model, Vector::Ones(static_cast<int>(std::round(k))));
  }
  return {model, theta};
}

}  // namespace models
}  // namespace saddlemax
