#ifndef SADDLEMAX_TEST_MODELS_COMMON_HPP
#define SADDLEMAX_TEST_MODELS_COMMON_HPP

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "saddlemax/models.hpp"

namespace saddlemax_test {

using namespace saddlemax;

struct ZooEntry {
  std::string name;
  ModelPtr model;
  std::function<Vector(std::mt19937_64&)> random_theta;
  std::function<RowVector(std::mt19937_64&, const Vector&)> random_s;
};

inline double runif(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Every built-in model plus one instance of each combinator, with samplers
// that stay safely inside the interior of the joint domain.
inline std::vector<ZooEntry> zoo() {
  std::vector<ZooEntry> z;

  z.push_back({"poisson", models::poisson(),
               [](std::mt19937_64& rng) { return Vector::Constant(1, runif(rng, 0.5, 5.0)); },
               [](std::mt19937_64& rng, const Vector&) {
                 return RowVector::Constant(1, runif(rng, -2.0, 2.0));
               }});

  z.push_back({"gamma", models::gamma_model(models::GammaVariant::free_alpha_r),
               [](std::mt19937_64& rng) {
                 Vector t(2);
                 t << runif(rng, 0.8, 3.0), runif(rng, 0.6, 2.5);
                 return t;
               },
               [](std::mt19937_64& rng, const Vector& th) {
                 return RowVector::Constant(1, runif(rng, -2.0, 0.75 * th[1]));
               }});

  z.push_back({"gamma_fi", models::gamma_model(models::GammaVariant::fi),
               [](std::mt19937_64& rng) { return Vector::Constant(1, runif(rng, 0.5, 3.0)); },
               [](std::mt19937_64& rng, const Vector&) {
                 return RowVector::Constant(1, runif(rng, -2.0, 0.75));
               }});

  z.push_back({"gamma_pi", models::gamma_model(models::GammaVariant::pi),
               [](std::mt19937_64& rng) { return Vector::Constant(1, runif(rng, 0.5, 3.0)); },
               [](std::mt19937_64& rng, const Vector& th) {
                 return RowVector::Constant(1, runif(rng, -2.0, 0.75 * th[0]));
               }});

  {
    Matrix M(2, 2), Sigma(2, 2);
    M << 1.0, 0.3, 0.0, 1.0;
    Sigma << 1.2, 0.4, 0.4, 0.9;
    Vector c(2);
    c << 0.1, -0.2;
    z.push_back({"normal", models::normal_affine(M, c, Sigma),
                 [](std::mt19937_64& rng) {
                   Vector t(2);
                   t << runif(rng, -2.0, 2.0), runif(rng, -2.0, 2.0);
                   return t;
                 },
                 [](std::mt19937_64& rng, const Vector&) {
                   RowVector s(2);
                   s << runif(rng, -1.5, 1.5), runif(rng, -1.5, 1.5);
                   return s;
                 }});
  }

  z.push_back({"normal_square", models::normal_with_square(),
               [](std::mt19937_64& rng) {
                 Vector t(2);
                 t << runif(rng, -1.0, 1.0), runif(rng, 0.5, 2.0);
                 return t;
               },
               [](std::mt19937_64& rng, const Vector& th) {
                 RowVector s(2);
                 s << runif(rng, -1.0, 1.0), runif(rng, -1.0, 0.7 * 0.5 / th[1]);
                 return s;
               }});

  z.push_back({"birth_death", models::birth_death(1.0),
               [](std::mt19937_64& rng) {
                 Vector t(2);
                 const double omega = runif(rng, -0.5, 0.5);
                 t << omega, std::abs(omega) + runif(rng, 0.3, 2.0);
                 return t;
               },
               [](std::mt19937_64& rng, const Vector& th) {
                 const auto [alpha, q] = models::birthdeath_alpha_q(th[0], th[1], 1.0);
                 (void)alpha;
                 const double smax = std::min(0.7 * (-std::log(q)), -std::log(q) - 0.12);
                 return RowVector::Constant(1, runif(rng, -2.0, std::max(smax, -1.0)));
               }});

  z.push_back({"mixture_normal", models::mixture_normal(),
               [](std::mt19937_64& rng) { return Vector::Constant(1, runif(rng, -1.5, 1.5)); },
               [](std::mt19937_64& rng, const Vector&) {
                 return RowVector::Constant(1, runif(rng, -2.0, 2.0));
               }});

  {
    Matrix M(2, 2), Sigma(2, 2);
    M << 1.0, 0.0, 0.0, 1.0;
    Sigma << 1.0, 0.2, 0.2, 0.8;
    Matrix A(1, 2);
    A << 0.7, 0.5;
    Vector b = Vector::Constant(1, 0.25);
    z.push_back({"linmap_normal",
                 models::compose_linear(A, models::normal_affine(M, Vector::Zero(2), Sigma), b),
                 [](std::mt19937_64& rng) {
                   Vector t(2);
                   t << runif(rng, -2.0, 2.0), runif(rng, -2.0, 2.0);
                   return t;
                 },
                 [](std::mt19937_64& rng, const Vector&) {
                   return RowVector::Constant(1, runif(rng, -1.5, 1.5));
                 }});
  }

  {
    Vector beta(2);
    beta << 1.0, 1.5;
    z.push_back({"concat_gamma_fi",
                 models::compose_concat(models::gamma_model(models::GammaVariant::fi), beta),
                 [](std::mt19937_64& rng) { return Vector::Constant(1, runif(rng, 0.5, 3.0)); },
                 [](std::mt19937_64& rng, const Vector&) {
                   RowVector s(2);
                   s << runif(rng, -2.0, 0.75), runif(rng, -2.0, 0.75);
                   return s;
                 }});
  }

  return z;
}

}  // namespace saddlemax_test

#endif
