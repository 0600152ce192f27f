#ifndef SADDLEMAX_EXPERIMENTS_HPP
#define SADDLEMAX_EXPERIMENTS_HPP

#include <cstdint>
#include <map>
#include <string>

#include "saddlemax/mle.hpp"
#include "saddlemax/models.hpp"

namespace saddlemax {

struct ExperimentConfig {
  std::string model;                     // model id (see models::make_model)
  std::map<std::string, double> params;  // flat parameter table
  std::string experiment;                // converge | sample | posterior | spa_vs_clt
  std::vector<double> n_grid;
  std::vector<ApproximationKind> kinds;
  Vector theta0;
  // Observation placement: either a fixed implied mean y0, or the rescaled
  // deviation form x = n K0'(0; theta') + sqrt(n) xi, where theta' equals
  // theta0 with its omega-coordinates replaced by omega_prime.
  std::optional<Vector> y0;
  std::optional<Vector> omega_prime;
  std::vector<int> split_omega;  // indices replaced by omega_prime (default: leading)
  std::optional<Vector> xi;
  int replicates = 1;
  std::uint64_t seed = 0;
  std::string out;

  std::optional<Vector> theta_init;
  std::optional<Vector> box_lo, box_hi;
  double box_halfwidth = 0.5;
  QuadratureConfig quad;
  double mle_tol = 1e-10;

  int grid_points = 4001;   // posterior grid per dimension
  double grid_scale = 8.0;  // posterior halfwidth = grid_scale / sqrt(n)

  std::vector<double> s_values;  // spa_vs_clt tilt values

  bool degenerate = false;              // chi_n = n*y0 deterministically
  std::optional<std::string> data_model;  // mis-specified data generator
  std::map<std::string, double> data_params;

  int threads = 1;

  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
  std::string to_json_text() const;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int points = 0;
  bool noisy = true;  // r^2 < 0.98 or too few points
};

// Least squares on (log n, log gap), zero gaps excluded; fits the largest
// `window` grid values.
SlopeFit fit_loglog_slope(const std::vector<double>& n, const std::vector<double>& gap,
                          int window = 5);

struct ExperimentResult {
  std::string csv;
  std::string meta_json;
  bool ok = true;
};

ExperimentResult run_converge(const ExperimentConfig& cfg);
ExperimentResult run_sample(const ExperimentConfig& cfg);
ExperimentResult run_posterior(const ExperimentConfig& cfg);
ExperimentResult run_spa_vs_clt(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Writes <out>.csv and <out>.meta.json.
void write_outputs(const ExperimentResult& result, const std::string& out_path);

// Counter-scrambled per-replicate RNG stream: order-independent across
// parallel execution.
std::uint64_t splitmix64(std::uint64_t x);
std::mt19937_64 replicate_rng(std::uint64_t seed, std::uint64_t replicate);

// Harness-level model construction: structural constants from the parameter
// table, theta supplied separately (see models::make_model for ids).
std::pair<ModelPtr, Vector> harness_model(const std::string& id,
                                          const std::map<std::string, double>& params,
                                          const std::optional<Vector>& theta_override);

}  // namespace saddlemax

#endif
