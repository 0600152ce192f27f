// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "saddlemax/experiments.hpp"
#include "saddlemax/special.hpp"

using namespace saddlemax;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Outcome {
  bool ok = true;
  std::string detail;
};

Outcome pass(const std::string& d) { return {true, d}; }
Outcome fail(const std::string& d) { return {false, d}; }

std::mt19937_64 g_rng(20250809);

double runif(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(g_rng);
}

Box box1(double lo, double hi) {
  Box b;
  b.lo = Vector::Constant(1, lo);
  b.hi = Vector::Constant(1, hi);
  return b;
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome criterion_normal_exactness() {
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int m = 1 + static_cast<int>(runif(0.0, 3.0 - 1e-12));
    Matrix A(m, m), M(m, m);
    for (int i = 0; i < m * m; ++i) {
      A(i) = runif(-1.0, 1.0);
      M(i) = runif(-1.0, 1.0);
    }
    const Matrix Sigma = A * A.transpose() + 0.3 * Matrix::Identity(m, m);
    if (std::abs(M.determinant()) < 0.05) M += Matrix::Identity(m, m);
    Vector c(m), th(m), x(m);
    for (int i = 0; i < m; ++i) {
      c[i] = runif(-1.0, 1.0);
      th[i] = runif(-2.0, 2.0);
    }
    auto model = models::normal_affine(M, c, Sigma);
    const double n = runif(0.5, 50.0);
    for (int i = 0; i < m; ++i) x[i] = runif(-3.0, 3.0) * n;
    const Observation obs(x, n);
    const double spa = log_likelihood(*model, th, obs, ApproximationKind::Saddlepoint).total;
    const auto exact = model->closed_form_log_density(th, x, n);
    worst = std::max(worst, std::abs(spa - *exact));
  }
  if (worst > 1e-12) return fail("max |spa - exact| = " + fmt_num(worst));
  return pass("max |spa - exact| = " + fmt_num(worst));
}

Outcome criterion_expfamily_mle_exactness() {
  auto pois = models::poisson();
  double worst = 0.0;
  for (int x = 1; x <= 50; ++x) {
    const Observation obs(Vector::Constant(1, static_cast<double>(x)), 1.0);
    MlePair pair =
        mle_error_pair(*pois, obs, ApproximationKind::Exact, ApproximationKind::Saddlepoint,
                       Vector::Constant(1, 0.75 * x), box1(0.2, 2.0 * x + 2.0));
    worst = std::max(worst, pair.gap);
  }
  if (worst > 1e-9) return fail("poisson max gap = " + fmt_num(worst));

  auto ns = models::normal_with_square();
  MleOptions opt;
  opt.quad.nodes_per_dim = 151;
  opt.quad.truncation_radius_multiplier = 18.0;
  opt.quad.tail_extension = 1.5;
  double worst_ns = 0.0;
  for (int rep = 0; rep < 6; ++rep) {
    const double n = std::floor(runif(32.0, 64.0));
    Vector th_true(2);
    th_true << runif(-0.5, 0.5), runif(0.8, 1.5);
    Vector x = ns->sample(th_true, n, g_rng);
    const Observation obs(x, n);
    Box box;
    box.lo = Vector(2);
    box.hi = Vector(2);
    box.lo << th_true[0] - 1.0, 0.3;
    box.hi << th_true[0] + 1.0, 3.0;
    MlePair pair = mle_error_pair(*ns, obs, ApproximationKind::Exact,
                                  ApproximationKind::Saddlepoint, th_true, box, opt);
    worst_ns = std::max(worst_ns, pair.gap);
  }
  if (worst_ns > 1e-9) return fail("bivariate-statistic max gap = " + fmt_num(worst_ns));
  return pass("poisson max gap = " + fmt_num(worst) + ", bivariate max gap = " +
              fmt_num(worst_ns));
}

Outcome criterion_poisson_stirling() {
  auto pois = models::poisson();
  const Vector th = Vector::Constant(1, 1.0);
  double worst = 0.0;
  for (int x = 1; x <= 50; ++x) {
    const Observation obs(Vector::Constant(1, static_cast<double>(x)), 1.0);
    const double spa = log_likelihood(*pois, th, obs, ApproximationKind::Saddlepoint).total;
    const double exact = *pois->closed_form_log_density(th, obs.x, 1.0);
    const double ratio = std::exp(spa - exact);
    const double stirling = std::exp(std::lgamma(x + 1.0)) /
                            (std::sqrt(2.0 * kPi * x) * std::pow(x / std::exp(1.0), x));
    worst = std::max(worst, std::abs(ratio / stirling - 1.0));
  }
  if (worst > 1e-10) return fail("max relative deviation = " + fmt_num(worst));
  return pass("max relative deviation = " + fmt_num(worst));
}

Outcome criterion_poisson_normal_mle() {
  auto pois = models::poisson();
  double worst = 0.0;
  for (int x = 1; x <= 50; ++x) {
    const Observation obs(Vector::Constant(1, static_cast<double>(x)), 1.0);
    MleFit fit = fit_mle(*pois, obs, ApproximationKind::NormalApprox,
                         Vector::Constant(1, static_cast<double>(x)), box1(0.1, x + 5.0));
    if (!fit.converged) return fail("fit did not converge at x = " + std::to_string(x));
    const double closed = std::sqrt(x * x + 0.25) - 0.5;
    worst = std::max(worst, std::abs(fit.theta_hat[0] - closed));
  }
  if (worst > 1e-8) return fail("max |lambda_tilde - closed form| = " + fmt_num(worst));
  return pass("max deviation = " + fmt_num(worst));
}

Outcome criterion_gamma_fi_rates() {
  ExperimentConfig cfg;
  cfg.model = "gamma_fi";
  cfg.experiment = "converge";
  cfg.theta0 = Vector::Constant(1, 1.0);
  cfg.n_grid = {16, 32, 64, 128, 256, 512};
  cfg.kinds = {ApproximationKind::Saddlepoint, ApproximationKind::ZerothOrder};
  cfg.y0 = Vector::Constant(1, 1.0);
  cfg.box_halfwidth = 0.6;
  ExperimentResult res = run_converge(cfg);
  if (!res.ok) return fail("converge run reported failures");
  auto meta = nlohmann::json::parse(res.meta_json);
  const double slope_spa = meta["slopes"]["spa"]["slope"].get<double>();
  const double slope_zeroth = meta["slopes"]["zeroth"]["slope"].get<double>();
  if (slope_spa < -2.3 || slope_spa > -1.7) {
    return fail("spa-vs-exact slope = " + fmt_num(slope_spa) + " outside [-2.3,-1.7]");
  }
  if (slope_zeroth < -1.2 || slope_zeroth > -0.8) {
    return fail("zeroth-vs-exact slope = " + fmt_num(slope_zeroth) + " outside [-1.2,-0.8]");
  }

  // Normal-approximation gap with a fixed nonzero deviation xi.
  cfg.kinds = {ApproximationKind::NormalApprox};
  cfg.y0.reset();
  cfg.omega_prime = Vector::Constant(1, 1.0);
  cfg.xi = Vector::Constant(1, 0.5);
  ExperimentResult res2 = run_converge(cfg);
  auto meta2 = nlohmann::json::parse(res2.meta_json);
  const double slope_normal = meta2["slopes"]["normal"]["slope"].get<double>();
  if (slope_normal < -1.3 || slope_normal > -0.7) {
    return fail("normal-vs-exact slope = " + fmt_num(slope_normal) + " outside [-1.3,-0.7]");
  }

  // |n (theta_spa - theta_zeroth) - 1/2| <= 5/n.
  auto gam = models::gamma_model(models::GammaVariant::fi);
  for (double n : cfg.n_grid) {
    const Observation obs = Observation::from_mean(Vector::Constant(1, 1.0), n);
    MleFit spa = fit_mle(*gam, obs, ApproximationKind::Saddlepoint, Vector::Constant(1, 1.0),
                         box1(0.4, 1.6));
    MleFit zeroth = fit_mle(*gam, obs, ApproximationKind::ZerothOrder, Vector::Constant(1, 1.0),
                            box1(0.4, 1.6));
    const double dev = std::abs(n * (spa.theta_hat[0] - zeroth.theta_hat[0]) - 0.5);
    if (dev > 5.0 / n) {
      return fail("half-shift relation violated at n = " + fmt_num(n) +
                  ": dev = " + fmt_num(dev));
    }
  }
  return pass("slopes: spa " + fmt_num(slope_spa) + ", zeroth " + fmt_num(slope_zeroth) +
              ", normal " + fmt_num(slope_normal));
}

Outcome criterion_gamma_pi_rates() {
  ExperimentConfig cfg;
  cfg.model = "gamma_pi";
  cfg.params = {{"k", 2.0}};
  cfg.experiment = "converge";
  cfg.theta0 = Vector::Constant(1, 1.0);
  cfg.n_grid = {16, 32, 64, 128, 256, 512};
  cfg.kinds = {ApproximationKind::Saddlepoint, ApproximationKind::NormalApprox};
  Vector xi(2);
  xi << 1.0, -1.0;
  cfg.xi = xi;
  cfg.box_halfwidth = 0.7;
  ExperimentResult res = run_converge(cfg);
  if (!res.ok) return fail("converge run reported failures");
  auto meta = nlohmann::json::parse(res.meta_json);
  const double slope_spa = meta["slopes"]["spa"]["slope"].get<double>();
  const double slope_normal = meta["slopes"]["normal"]["slope"].get<double>();
  if (slope_spa < -1.25 || slope_spa > -0.75) {
    return fail("spa slope in nu = " + fmt_num(slope_spa) + " outside [-1.25,-0.75]");
  }
  if (slope_normal < -0.7 || slope_normal > -0.3) {
    // Cross-check with a deviation whose third moment does not vanish: the
    // O(1/sqrt(n)) term of the normal-approximation MLE error carries a
    // sum(xi^3) coefficient, which is identically zero for xi = (1, -1).
    Vector xi_generic(2);
    xi_generic << 1.0, -0.5;
    cfg.xi = xi_generic;
    cfg.kinds = {ApproximationKind::NormalApprox};
    ExperimentResult res_g = run_converge(cfg);
    auto meta_g = nlohmann::json::parse(res_g.meta_json);
    const double slope_generic = meta_g["slopes"]["normal"]["slope"].get<double>();
    return fail("normal slope in nu = " + fmt_num(slope_normal) +
                " outside [-0.7,-0.3]; unattainable at xi=(1,-1) where sum(xi^3)=0 kills "
                "the 1/sqrt(n) term (gap = 1/(3n) exactly); generic xi=(1,-0.5) gives slope " +
                fmt_num(slope_generic) + " -- see decisions ledger");
  }
  return pass("slopes: spa " + fmt_num(slope_spa) + ", normal " + fmt_num(slope_normal));
}

Outcome criterion_inversion_oracle() {
  // Gamma, heavy tails handled by the tapered extension.
  auto gam = models::gamma_model(models::GammaVariant::free_alpha_r);
  QuadratureConfig quad;
  quad.nodes_per_dim = 301;
  quad.tail_extension = 120.0;
  double worst_gamma = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    double alpha = runif(0.7, 3.5);
    double n = std::floor(runif(2.0, 40.0));
    while (n * alpha < 2.0) n += 1.0;
    const double r = runif(0.5, 2.5);
    Vector th(2);
    th << alpha, r;
    const RowVector s_star = RowVector::Constant(1, runif(-1.0, 0.6 * r));
    const Vector y = evaluate(*gam, s_star, th, block::grad_s).grad_s;
    const Observation obs = Observation::from_mean(y, n);
    const double exact_quad =
        log_likelihood(*gam, th, obs, ApproximationKind::Exact, quad).total;
    const double closed = *gam->closed_form_log_density(th, obs.x, n);
    worst_gamma = std::max(worst_gamma, std::abs(exact_quad - closed));
  }
  if (worst_gamma > 1e-6) return fail("gamma max |quad - closed| = " + fmt_num(worst_gamma));

  // Normal (m in {1, 2}).
  double worst_normal = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int m = 1 + (rep % 2);
    Matrix A(m, m);
    for (int i = 0; i < m * m; ++i) A(i) = runif(-1.0, 1.0);
    const Matrix Sigma = A * A.transpose() + 0.4 * Matrix::Identity(m, m);
    auto nor = models::normal_affine(Matrix::Identity(m, m), Vector::Zero(m), Sigma);
    Vector th(m), x(m);
    for (int i = 0; i < m; ++i) {
      th[i] = runif(-1.5, 1.5);
      x[i] = runif(-2.0, 2.0);
    }
    const double n = runif(1.0, 30.0);
    const Observation obs(Vector(x * n), n);
    const double exact_quad = log_likelihood(*nor, th, obs, ApproximationKind::Exact).total;
    const double closed = *nor->closed_form_log_density(th, obs.x, n);
    worst_normal = std::max(worst_normal, std::abs(exact_quad - closed));
  }
  if (worst_normal > 1e-6) return fail("normal max |quad - closed| = " + fmt_num(worst_normal));

  // Poisson pmf through the lattice inversion.
  auto pois = models::poisson();
  double worst_pois = 0.0;
  for (int x = 1; x <= 40; ++x) {
    for (double theta : {0.8, 2.5, 7.0}) {
      const Vector th = Vector::Constant(1, theta);
      const Observation obs(Vector::Constant(1, static_cast<double>(x)), 1.0);
      const double exact_quad = log_likelihood(*pois, th, obs, ApproximationKind::Exact).total;
      const double pmf = *pois->closed_form_log_density(th, obs.x, 1.0);
      worst_pois = std::max(worst_pois, std::abs(std::expm1(exact_quad - pmf)));
    }
  }
  if (worst_pois > 1e-10) return fail("poisson pmf max rel err = " + fmt_num(worst_pois));
  return pass("gamma " + fmt_num(worst_gamma) + ", normal " + fmt_num(worst_normal) +
              ", poisson rel " + fmt_num(worst_pois));
}

struct GradCase {
  std::string name;
  ModelPtr model;
  std::function<Vector()> theta;
  std::function<Observation(const Vector&)> obs;
  QuadratureConfig quad;
};

Outcome criterion_gradient_suite() {
  std::vector<GradCase> cases;
  {
    GradCase c;
    c.name = "poisson";
    c.model = models::poisson();
    c.theta = [] { return Vector::Constant(1, runif(0.6, 4.0)); };
    c.obs = [](const Vector&) {
      return Observation(Vector::Constant(1, std::floor(runif(2.0, 40.0))),
                         std::floor(runif(1.0, 8.0)));
    };
    cases.push_back(c);
  }
  {
    GradCase c;
    c.name = "gamma";
    c.model = models::gamma_model(models::GammaVariant::free_alpha_r);
    c.theta = [] {
      Vector t(2);
      t << runif(1.0, 3.0), runif(0.7, 2.0);
      return t;
    };
    c.obs = [](const Vector& th) {
      const double n = std::floor(40.0 / th[0]) + 30.0;
      return Observation::from_mean(Vector::Constant(1, runif(0.6, 2.0) * th[0] / th[1]), n);
    };
    c.quad.nodes_per_dim = 301;
    c.quad.tail_extension = 10.0;
    cases.push_back(c);
  }
  {
    GradCase c;
    c.name = "gamma_fi";
    c.model = models::gamma_model(models::GammaVariant::fi);
    c.theta = [] { return Vector::Constant(1, runif(0.7, 2.5)); };
    c.obs = [](const Vector& th) {
      const double n = std::floor(40.0 / th[0]) + 20.0;
      return Observation::from_mean(Vector::Constant(1, runif(0.6, 2.0) * th[0]), n);
    };
    c.quad.nodes_per_dim = 301;
    c.quad.tail_extension = 10.0;
    cases.push_back(c);
  }
  {
    GradCase c;
    c.name = "gamma_pi";
    c.model = models::gamma_model(models::GammaVariant::pi);
    c.theta = [] { return Vector::Constant(1, runif(0.7, 2.5)); };
    c.obs = [](const Vector& th) {
      const double n = std::floor(40.0 / th[0]) + 20.0;
      return Observation::from_mean(Vector::Constant(1, runif(0.7, 1.4)), n);
    };
    c.quad.nodes_per_dim = 301;
    c.quad.tail_extension = 10.0;
    cases.push_back(c);
  }
  {
    Matrix M(2, 2), Sigma(2, 2);
    M << 1.0, 0.3, -0.2, 1.0;
    Sigma << 1.4, 0.5, 0.5, 1.0;
    GradCase c;
    c.name = "normal";
    c.model = models::normal_affine(M, Vector::Zero(2), Sigma);
    c.theta = [] {
      Vector t(2);
      t << runif(-1.5, 1.5), runif(-1.5, 1.5);
      return t;
    };
    c.obs = [](const Vector&) {
      const double n = runif(2.0, 30.0);
      Vector x(2);
      x << runif(-2.0, 2.0) * n, runif(-2.0, 2.0) * n;
      return Observation(x, n);
    };
    cases.push_back(c);
  }
  {
    GradCase c;
    c.name = "normal_square";
    c.model = models::normal_with_square();
    c.theta = [] {
      Vector t(2);
      t << runif(-0.8, 0.8), runif(0.7, 1.6);
      return t;
    };
    c.obs = [](const Vector& th) {
      const double n = std::floor(runif(32.0, 64.0));
      Vector y(2);
      const double zbar = th[0] + runif(-0.3, 0.3);
      y << zbar, zbar * zbar + th[1] * runif(0.7, 1.4);
      return Observation::from_mean(y, n);
    };
    c.quad.nodes_per_dim = 151;
    c.quad.truncation_radius_multiplier = 18.0;
    c.quad.tail_extension = 1.5;
    cases.push_back(c);
  }
  {
    GradCase c;
    c.name = "birth_death";
    c.model = models::birth_death(1.0);
    c.theta = [] {
      Vector t(2);
      const double omega = runif(-0.4, 0.4);
      t << omega, std::abs(omega) + runif(0.3, 1.2);
      return t;
    };
    c.obs = [](const Vector& th) {
      const double n = std::floor(runif(10.0, 50.0));
      const double mean = std::exp(th[0]);
      return Observation(
          Vector::Constant(1, std::max(1.0, std::round(n * mean * runif(0.7, 1.3)))), n);
    };
    cases.push_back(c);
  }
  {
    GradCase c;
    c.name = "mixture_normal";
    c.model = models::mixture_normal();
    c.theta = [] { return Vector::Constant(1, runif(-1.2, 1.2)); };
    c.obs = [](const Vector&) {
      const double n = std::floor(runif(8.0, 40.0));
      return Observation(Vector::Constant(1, runif(-0.4, 0.4) * n), n);
    };
    // The near-lattice summand B = +-1 puts genuine mass at phi = k*pi; the
    // box must span the Gaussian envelope scale 1/sqrt(n v), far wider than
    // the tilted-covariance estimate, and must not be tapered.
    c.quad.nodes_per_dim = 2001;
    c.quad.truncation_radius_multiplier = 110.0;
    cases.push_back(c);
  }
  {
    Matrix M = Matrix::Identity(2, 2), Sigma(2, 2);
    Sigma << 1.0, 0.2, 0.2, 0.8;
    Matrix A(1, 2);
    A << 0.7, 0.5;
    GradCase c;
    c.name = "linmap_normal";
    c.model = models::compose_linear(A, models::normal_affine(M, Vector::Zero(2), Sigma),
                                     Vector::Constant(1, 0.25));
    c.theta = [] {
      Vector t(2);
      t << runif(-1.5, 1.5), runif(-1.5, 1.5);
      return t;
    };
    c.obs = [](const Vector&) {
      const double n = runif(2.0, 30.0);
      return Observation(Vector::Constant(1, runif(-2.0, 2.0) * n), n);
    };
    cases.push_back(c);
  }
  {
    Vector beta = Vector::Ones(2);
    GradCase c;
    c.name = "concat_gamma_fi";
    c.model = models::compose_concat(models::gamma_model(models::GammaVariant::fi), beta);
    c.theta = [] { return Vector::Constant(1, runif(0.8, 2.0)); };
    c.obs = [](const Vector& th) {
      const double n = std::floor(40.0 / th[0]) + 30.0;
      Vector y(2);
      y << runif(0.7, 1.6) * th[0], runif(0.7, 1.6) * th[0];
      return Observation::from_mean(y, n);
    };
    c.quad.truncation_radius_multiplier = 14.0;
    c.quad.tail_extension = 1.5;
    cases.push_back(c);
  }

  const std::vector<ApproximationKind> kinds{
      ApproximationKind::Saddlepoint, ApproximationKind::ZerothOrder,
      ApproximationKind::NormalApprox, ApproximationKind::Exact};
  double worst = 0.0;
  std::string worst_label = "-";
  for (const auto& c : cases) {
    for (int rep = 0; rep < 20; ++rep) {
      const Vector th = c.theta();
      const Observation obs = c.obs(th);
      for (auto kind : kinds) {
        RowVector g, fd(th.size());
        try {
          g = grad_log_likelihood(*c.model, th, obs, kind, c.quad);
          for (int j = 0; j < th.size(); ++j) {
            const double h = std::max(1e-6, 1e-6 * std::abs(th[j]));
            Vector tp = th, tm = th;
            tp[j] += h;
            tm[j] -= h;
            fd[j] = (log_likelihood(*c.model, tp, obs, kind, c.quad).total -
                     log_likelihood(*c.model, tm, obs, kind, c.quad).total) /
                    (2.0 * h);
          }
        } catch (const NoSaddlepointError&) {
          continue;  // observation fell outside Y_theta for this draw
        }
        const double rel =
            (g - fd).lpNorm<Eigen::Infinity>() / std::max(1.0, fd.lpNorm<Eigen::Infinity>());
        if (rel > worst) {
          worst = rel;
          worst_label = c.name + "/" + kind_name(kind);
        }
      }
    }
  }
  if (worst > 1e-6) return fail("worst relative error " + fmt_num(worst) + " at " + worst_label);
  return pass("worst relative error " + fmt_num(worst) + " (" + worst_label + ")");
}

Outcome criterion_sampling_distribution() {
  ExperimentConfig cfg;
  cfg.model = "gamma_fi";
  cfg.experiment = "sample";
  cfg.theta0 = Vector::Constant(1, 1.0);
  cfg.n_grid = {200};
  cfg.kinds = {ApproximationKind::Saddlepoint, ApproximationKind::Exact};
  cfg.replicates = 2000;
  cfg.seed = 20240817;
  cfg.box_halfwidth = 0.6;
  cfg.threads = 4;
  ExperimentResult res = run_sample(cfg);
  if (!res.ok) return fail("failed-replicate fraction above 1%");
  std::stringstream ss(res.csv);
  std::string line;
  std::getline(ss, line);
  double var_spa = -1.0;
  while (std::getline(ss, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells[1] == "spa") var_spa = std::stod(cells[4]);
  }
  if (std::abs(var_spa - 1.0) > 0.15) {
    return fail("sample variance of sqrt(n)(theta-theta0) = " + fmt_num(var_spa));
  }
  auto meta = nlohmann::json::parse(res.meta_json);
  const double max_gap = meta["per_n"][0]["pair_max_gaps"][0]["max_gap"].get<double>();
  if (max_gap > 1e-3) return fail("max replicate |spa - exact| = " + fmt_num(max_gap));
  return pass("variance = " + fmt_num(var_spa) + ", max spa-vs-exact gap = " + fmt_num(max_gap));
}

Outcome criterion_posterior_grid() {
  ExperimentConfig cfg;
  cfg.model = "gamma_fi";
  cfg.experiment = "posterior";
  cfg.theta0 = Vector::Constant(1, 1.0);
  cfg.n_grid = {400};
  cfg.kinds = {ApproximationKind::Exact, ApproximationKind::Saddlepoint,
               ApproximationKind::ZerothOrder};
  cfg.grid_points = 4001;
  cfg.grid_scale = 8.0;
  ExperimentResult res = run_posterior(cfg);
  std::stringstream ss(res.csv);
  std::string line;
  std::getline(ss, line);
  std::string detail;
  while (std::getline(ss, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    const double var = std::stod(cells[3]);
    if (std::abs(var - 1.0) > 0.10) {
      return fail("posterior variance under " + cells[1] + " = " + fmt_num(var));
    }
    detail += cells[1] + " " + fmt_num(var) + " ";
  }
  return pass("variances: " + detail);
}

Outcome criterion_normal_square_ratio() {
  auto ns = models::normal_with_square();
  Vector th(2);
  th << 0.3, 1.2;
  double prev_dev = 1e9;
  double worst = 0.0;
  for (int n = 3; n <= 12; ++n) {
    Vector y(2);
    y << 0.9, 0.9 * 0.9 + 1.1;  // ybar2 > ybar1^2
    const Observation obs = Observation::from_mean(y, static_cast<double>(n));
    const double spa = log_likelihood(*ns, th, obs, ApproximationKind::Saddlepoint).total;
    const double exact = *ns->closed_form_log_density(th, obs.x, obs.n);
    const double ratio = std::exp(spa - exact);
    const double formula = std::pow(2.0, 0.5 * (n - 3.0)) * std::exp(0.5 * n) *
                           std::exp(std::lgamma(0.5 * (n - 1.0))) /
                           (std::pow(static_cast<double>(n), 0.5 * n - 1.0) * std::sqrt(kPi));
    worst = std::max(worst, std::abs(ratio / formula - 1.0));
    const double dev = std::abs(ratio - 1.0);
    if (dev > prev_dev + 1e-12) {
      return fail("|ratio - 1| not monotone at n = " + std::to_string(n));
    }
    prev_dev = dev;
  }
  if (worst > 1e-8) return fail("max relative deviation from formula = " + fmt_num(worst));
  return pass("max relative deviation = " + fmt_num(worst) + ", |ratio-1| monotone");
}

Outcome criterion_mixture_failure_mode() {
  auto mix = models::mixture_normal();
  const Observation obs(Vector::Zero(1), 1.0);
  const double theta = 1.5, w = theta * theta, h = 1e-5;
  auto spa_at = [&](double ww) {
    return log_likelihood(*mix, Vector::Constant(1, std::sqrt(ww)), obs,
                          ApproximationKind::Saddlepoint)
        .total;
  };
  const double slope = (spa_at(w + h) - spa_at(w - h)) / (2.0 * h);
  if (!(slope > 0.0)) return fail("d spa / d theta^2 = " + fmt_num(slope) + " not positive");
  const double at0 = *mix->closed_form_log_density(Vector::Zero(1), obs.x, 1.0);
  for (double t = 0.1; t <= 2.5; t += 0.1) {
    if (*mix->closed_form_log_density(Vector::Constant(1, t), obs.x, 1.0) >= at0) {
      return fail("exact likelihood not maximised at theta = 0 (beaten at " + fmt_num(t) + ")");
    }
  }
  return pass("d spa/d theta^2 = " + fmt_num(slope) + " > 0, exact argmax at 0");
}

Outcome criterion_identifiability() {
  auto gam = models::gamma_model(models::GammaVariant::fi);
  const double theta0 = 1.3;
  auto rep = identifiability(*gam, RowVector::Zero(1), Vector::Constant(1, theta0));
  if (std::abs(rep.H(0, 0) + 1.0 / theta0) > 1e-10 || !rep.H_negdef) {
    return fail("GammaFI H = " + fmt_num(rep.H(0, 0)) + " expected " + fmt_num(-1.0 / theta0));
  }

  const Matrix Sigma = Matrix::Identity(2, 2);
  auto nor = models::normal_affine(Matrix::Identity(2, 2), Vector::Zero(2), Sigma);
  Vector th0(2);
  th0 << 0.2, -0.4;
  auto repn = identifiability(*nor, RowVector::Zero(2), th0);
  if ((repn.H + Sigma).lpNorm<Eigen::Infinity>() > 1e-10 || !repn.H_negdef) {
    return fail("normal mean model H != -Sigma");
  }

  auto bd = models::birth_death(1.0);
  Vector thbd(2);
  thbd << 0.25, 1.1;
  auto vec = models::compose_concat(bd, Vector::Ones(3));
  ParameterSplit split;
  split.omega_indices = {0};
  split.nu_indices = {1};
  const double a = evaluate(*bd, RowVector::Zero(1), thbd, block::hess_s).hess_s(0, 0);
  Vector xi0(3);
  const double c = std::sqrt(1.5 * a);
  xi0 << c, 0.0, -c;
  auto reppi = identifiability(*vec, RowVector::Zero(3), thbd, split, xi0);
  const double proj = (reppi.J * reppi.A * reppi.J - reppi.J).lpNorm<Eigen::Infinity>();
  if (proj > 1e-10) return fail("projection identity |JAJ - J| = " + fmt_num(proj));
  if (!reppi.E_negdef) return fail("E not negative definite");
  return pass("H checks pass, |JAJ - J| = " + fmt_num(proj));
}

Outcome criterion_affine_invariance() {
  Vector beta = Vector::Ones(2);
  auto base = models::compose_concat(models::gamma_model(models::GammaVariant::fi), beta);
  const double n = 20.0;
  Vector x(2);
  x << 1.15 * n, 0.85 * n;
  const Observation obs(x, n);
  MleFit ref = fit_mle(*base, obs, ApproximationKind::Saddlepoint, Vector::Constant(1, 0.9),
                       box1(0.3, 3.0));
  if (!ref.converged) return fail("reference fit did not converge");
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Matrix A(2, 2);
    do {
      A << runif(-2, 2), runif(-2, 2), runif(-2, 2), runif(-2, 2);
    } while (std::abs(A.determinant()) < 0.3);
    Vector b(2);
    b << runif(-1, 1), runif(-1, 1);
    auto mapped = models::compose_linear(A, base, b);
    const Observation obs_t(Vector(A * x + n * b), n);
    MleFit fit = fit_mle(*mapped, obs_t, ApproximationKind::Saddlepoint,
                         Vector::Constant(1, 0.9), box1(0.3, 3.0));
    if (!fit.converged) return fail("transformed fit did not converge");
    worst = std::max(worst, std::abs(fit.theta_hat[0] - ref.theta_hat[0]));
  }
  if (worst > 1e-8) return fail("max MLE shift = " + fmt_num(worst));
  return pass("max MLE shift over 10 maps = " + fmt_num(worst));
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "normal exactness", criterion_normal_exactness},
      {2, "exponential-family MLE exactness", criterion_expfamily_mle_exactness},
      {3, "poisson stirling ratio", criterion_poisson_stirling},
      {4, "poisson normal-approximation MLE", criterion_poisson_normal_mle},
      {5, "gamma-fi rate suite", criterion_gamma_fi_rates},
      {6, "gamma-pi rate suite", criterion_gamma_pi_rates},
      {7, "inversion oracle", criterion_inversion_oracle},
      {8, "gradient suite", criterion_gradient_suite},
      {9, "sampling distribution", criterion_sampling_distribution},
      {10, "posterior grid", criterion_posterior_grid},
      {11, "normal-with-square ratio", criterion_normal_square_ratio},
      {12, "mixture failure mode", criterion_mixture_failure_mode},
      {13, "identifiability diagnostics", criterion_identifiability},
      {14, "affine invariance", criterion_affine_invariance},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();
    std::printf("%s %2d %-36s %s (%.1fs)\n", out.ok ? "PASS" : "FAIL", c.id, c.name,
                out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.ok) ++failures;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) FAILED\n", failures);
  } else {
    std::printf("all %d criteria passed\n", static_cast<int>(criteria.size()));
  }
  return failures;
}
