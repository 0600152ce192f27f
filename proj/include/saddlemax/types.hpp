#ifndef SADDLEMAX_TYPES_HPP
#define SADDLEMAX_TYPES_HPP

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace saddlemax {

using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;
using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexRowVector = Eigen::RowVectorXcd;

// (s, theta) outside the model's joint domain, or invalid theta.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Requested capability or derivative block is not available.
struct NotSupportedError : std::runtime_error {
  explicit NotSupportedError(const std::string& what) : std::runtime_error(what) {}
};

// K0'(s;theta) = y has no reachable solution (y outside or on boundary of Y_theta).
struct NoSaddlepointError : std::runtime_error {
  explicit NoSaddlepointError(const std::string& what) : std::runtime_error(what) {}
};

struct SingularHessianError : std::runtime_error {
  explicit SingularHessianError(const std::string& what) : std::runtime_error(what) {}
};

// Computed P-factor came out <= 0, or its imaginary part failed the sanity bound.
struct QuadratureNonpositiveError : std::runtime_error {
  explicit QuadratureNonpositiveError(const std::string& what) : std::runtime_error(what) {}
};

// Truncation test failed: the integrand has not decayed at the box boundary.
struct TailNotDecayedError : std::runtime_error {
  explicit TailNotDecayedError(const std::string& what) : std::runtime_error(what) {}
};

struct RankDeficientError : std::runtime_error {
  explicit RankDeficientError(const std::string& what) : std::runtime_error(what) {}
};

struct NotConvergedError : std::runtime_error {
  explicit NotConvergedError(const std::string& what) : std::runtime_error(what) {}
};

// Every grid point of a posterior evaluation underflowed to -inf.
struct GridUnderflowError : std::runtime_error {
  explicit GridUnderflowError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace saddlemax

#endif
