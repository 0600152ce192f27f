#include "saddlemax/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace saddlemax {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

struct CsvBuilder {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    std::ostringstream os;
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
      for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
      os << "\n";
    }
    return os.str();
  }
};

Vector to_vector(const json& j) {
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
  return v;
}

json from_vector(const Vector& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

std::map<std::string, double> to_table(const json& j) {
  std::map<std::string, double> t;
  for (auto it = j.begin(); it != j.end(); ++it) t[it.key()] = it.value().get<double>();
  return t;
}

// The experiment harness resolves kind "exact" through the closed-form oracle
// when the model has one, falling back to the inversion quadrature.
struct ExactReference {
  bool closed_form = false;

  explicit ExactReference(const CgfModel& model)
      : closed_form(model.capabilities().has_closed_form_likelihood) {}

  const char* name() const { return closed_form ? "closed_form" : "quadrature"; }

  MleFit fit(const CgfModel& model, const Observation& obs, const Vector& init, const Box& box,
             const MleOptions& opt) const {
    if (closed_form) return fit_mle_closed_form(model, obs, init, box, opt);
    return fit_mle(model, obs, ApproximationKind::Exact, init, box, opt);
  }

  double loglik(const CgfModel& model, const Vector& theta, const Observation& obs,
                const QuadratureConfig& quad) const {
    if (closed_form) {
      auto v = model.closed_form_log_density(theta, obs.x, obs.n);
      if (v) return *v;
    }
    return log_likelihood(model, theta, obs, ApproximationKind::Exact, quad).total;
  }
};

struct HarnessSetup {
  ModelPtr model;
  Vector theta0;
  Vector theta_init;
  Box box;
  MleOptions opt;
};

HarnessSetup setup(const ExperimentConfig& cfg) {
  HarnessSetup h;
  auto [model, theta] = harness_model(cfg.model, cfg.params,
                                      cfg.theta0.size() ? std::optional<Vector>(cfg.theta0)
                                                        : std::nullopt);
  h.model = model;
  h.theta0 = theta;
  h.theta_init = cfg.theta_init.value_or(h.theta0);
  if (cfg.box_lo && cfg.box_hi) {
    h.box.lo = *cfg.box_lo;
    h.box.hi = *cfg.box_hi;
  } else {
    h.box = Box::around(h.theta0, cfg.box_halfwidth);
  }
  h.opt.quad = cfg.quad;
  h.opt.tol = cfg.mle_tol;
  return h;
}

// Placement of the observation on the n-grid: fixed y0, or the tube
// x = n K0'(0;theta') + sqrt(n) xi.
Vector implied_mean(const ExperimentConfig& cfg, const HarnessSetup& h, double n) {
  Vector theta_prime = h.theta0;
  if (cfg.omega_prime) {
    std::vector<int> idx = cfg.split_omega;
    if (idx.empty()) {
      for (int i = 0; i < cfg.omega_prime->size(); ++i) idx.push_back(i);
    }
    for (size_t i = 0; i < idx.size(); ++i) theta_prime[idx[i]] = (*cfg.omega_prime)[i];
  }
  if (cfg.y0) {
    Vector y = *cfg.y0;
    if (cfg.xi) y += *cfg.xi / std::sqrt(n);
    return y;
  }
  RowVector zero = RowVector::Zero(h.model->signature().m);
  CgfEvaluation ev = evaluate(*h.model, zero, theta_prime, block::grad_s);
  Vector y = ev.grad_s;
  if (cfg.xi) y += *cfg.xi / std::sqrt(n);
  return y;
}

void run_indexed_parallel(int count, int threads, const std::function<void(int)>& work) {
  threads = std::max(1, std::min<int>(threads, std::thread::hardware_concurrency()));
  if (threads == 1 || count <= 1) {
    for (int i = 0; i < count; ++i) work(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) work(i);
    });
  }
  for (auto& th : pool) th.join();
}

json slope_to_json(const SlopeFit& s) {
  return json{{"slope", s.slope},
              {"intercept", s.intercept},
              {"r_squared", s.r_squared},
              {"points", s.points},
              {"noisy", s.noisy}};
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 replicate_rng(std::uint64_t seed, std::uint64_t replicate) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(replicate)));
}

std::pair<ModelPtr, Vector> harness_model(const std::string& id,
                                          const std::map<std::string, double>& params,
                                          const std::optional<Vector>& theta_override) {
  if (!theta_override) return models::make_model(id, params);
  // Inject theta components under the canonical parameter names so the
  // factory can assemble the model structure.
  std::map<std::string, double> table = params;
  const Vector& th = *theta_override;
  auto put = [&table](const std::string& k, double v) { table.emplace(k, v); };
  if (id == "poisson" || id == "gamma_fi" || id == "gamma_pi" || id == "mixture_normal" ||
      id == "normal") {
    put("theta", th[0]);
  } else if (id == "gamma") {
    put("alpha", th[0]);
    put("r", th[1]);
  } else if (id == "normal_square") {
    put("mu", th[0]);
    put("sigma2", th[1]);
  } else if (id == "birth_death") {
    put("omega", th[0]);
    put("nu", th[1]);
  }
  auto built = models::make_model(id, table);
  return {built.first, *theta_override};
}

SlopeFit fit_loglog_slope(const std::vector<double>& n, const std::vector<double>& gap,
                          int window) {
  std::vector<std::pair<double, double>> pts;
  for (size_t i = 0; i < n.size(); ++i) {
    if (gap[i] > 0.0 && std::isfinite(gap[i])) pts.emplace_back(n[i], gap[i]);
  }
  std::sort(pts.begin(), pts.end());
  if (static_cast<int>(pts.size()) > window) {
    pts.erase(pts.begin(), pts.end() - window);
  }
  SlopeFit out;
  out.points = static_cast<int>(pts.size());
  if (out.points < 2) return out;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto& [nn, gg] : pts) {
    const double x = std::log(nn), y = std::log(gg);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(out.points);
  const double denom = k * sxx - sx * sx;
  out.slope = (k * sxy - sx * sy) / denom;
  out.intercept = (sy - out.slope * sx) / k;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / k;
  for (auto& [nn, gg] : pts) {
    const double x = std::log(nn), y = std::log(gg);
    const double pred = out.intercept + out.slope * x;
    ss_res += (y - pred) * (y - pred);
    ss_tot += (y - ybar) * (y - ybar);
  }
  out.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  out.noisy = out.r_squared < 0.98;
  return out;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  c.model = j.at("model").get<std::string>();
  if (j.contains("params")) c.params = to_table(j["params"]);
  c.experiment = j.at("experiment").get<std::string>();
  if (j.contains("n_grid")) {
    for (const auto& v : j["n_grid"]) c.n_grid.push_back(v.get<double>());
  }
  if (j.contains("kinds")) {
    for (const auto& v : j["kinds"]) c.kinds.push_back(kind_from_name(v.get<std::string>()));
  }
  if (j.contains("theta0")) c.theta0 = to_vector(j["theta0"]);
  if (j.contains("y0")) c.y0 = to_vector(j["y0"]);
  if (j.contains("omega_prime")) c.omega_prime = to_vector(j["omega_prime"]);
  if (j.contains("split_omega")) {
    for (const auto& v : j["split_omega"]) c.split_omega.push_back(v.get<int>());
  }
  if (j.contains("xi")) c.xi = to_vector(j["xi"]);
  if (j.contains("replicates")) c.replicates = j["replicates"].get<int>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("out")) c.out = j["out"].get<std::string>();
  if (j.contains("theta_init")) c.theta_init = to_vector(j["theta_init"]);
  if (j.contains("box_lo")) c.box_lo = to_vector(j["box_lo"]);
  if (j.contains("box_hi")) c.box_hi = to_vector(j["box_hi"]);
  if (j.contains("box_halfwidth")) c.box_halfwidth = j["box_halfwidth"].get<double>();
  if (j.contains("mle_tol")) c.mle_tol = j["mle_tol"].get<double>();
  if (j.contains("quadrature")) {
    const json& q = j["quadrature"];
    if (q.contains("nodes_per_dim")) c.quad.nodes_per_dim = q["nodes_per_dim"].get<int>();
    if (q.contains("truncation_radius_multiplier")) {
      c.quad.truncation_radius_multiplier = q["truncation_radius_multiplier"].get<double>();
    }
    if (q.contains("lattice_nodes_per_dim")) {
      c.quad.lattice_nodes_per_dim = q["lattice_nodes_per_dim"].get<int>();
    }
    if (q.contains("tail_extension")) c.quad.tail_extension = q["tail_extension"].get<double>();
    if (q.contains("scheme")) {
      const std::string s = q["scheme"].get<std::string>();
      if (s == "trapezoid_periodic") c.quad.scheme = QuadratureScheme::trapezoid_periodic;
      else if (s == "tanh_sinh") c.quad.scheme = QuadratureScheme::tanh_sinh;
      else c.quad.scheme = QuadratureScheme::plain_trapezoid;
    }
  }
  if (j.contains("grid_points")) c.grid_points = j["grid_points"].get<int>();
  if (j.contains("grid_scale")) c.grid_scale = j["grid_scale"].get<double>();
  if (j.contains("s_values")) {
    for (const auto& v : j["s_values"]) c.s_values.push_back(v.get<double>());
  }
  if (j.contains("degenerate")) c.degenerate = j["degenerate"].get<bool>();
  if (j.contains("data_model")) c.data_model = j["data_model"].get<std::string>();
  if (j.contains("data_params")) c.data_params = to_table(j["data_params"]);
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["model"] = model;
  j["params"] = params;
  j["experiment"] = experiment;
  j["n_grid"] = n_grid;
  json ks = json::array();
  for (auto k : kinds) ks.push_back(kind_name(k));
  j["kinds"] = ks;
  j["theta0"] = from_vector(theta0);
  if (y0) j["y0"] = from_vector(*y0);
  if (omega_prime) j["omega_prime"] = from_vector(*omega_prime);
  if (!split_omega.empty()) j["split_omega"] = split_omega;
  if (xi) j["xi"] = from_vector(*xi);
  j["replicates"] = replicates;
  j["seed"] = seed;
  j["out"] = out;
  if (theta_init) j["theta_init"] = from_vector(*theta_init);
  if (box_lo) j["box_lo"] = from_vector(*box_lo);
  if (box_hi) j["box_hi"] = from_vector(*box_hi);
  j["box_halfwidth"] = box_halfwidth;
  j["mle_tol"] = mle_tol;
  j["quadrature"] = {{"nodes_per_dim", quad.nodes_per_dim},
                     {"truncation_radius_multiplier", quad.truncation_radius_multiplier},
                     {"lattice_nodes_per_dim", quad.lattice_nodes_per_dim},
                     {"tail_extension", quad.tail_extension}};
  j["grid_points"] = grid_points;
  j["grid_scale"] = grid_scale;
  if (!s_values.empty()) j["s_values"] = s_values;
  j["degenerate"] = degenerate;
  if (data_model) j["data_model"] = *data_model;
  if (!data_params.empty()) j["data_params"] = data_params;
  j["threads"] = threads;
  return j.dump(2);
}

ExperimentResult run_converge(const ExperimentConfig& cfg) {
  HarnessSetup h = setup(cfg);
  const int p = h.model->signature().p;
  ExactReference ref(*h.model);

  CsvBuilder csv;
  csv.header = {"n"};
  for (int i = 0; i < p; ++i) csv.header.push_back("ref_theta_" + std::to_string(i));
  for (auto k : cfg.kinds) {
    for (int i = 0; i < p; ++i) {
      csv.header.push_back(std::string(kind_name(k)) + "_theta_" + std::to_string(i));
    }
    csv.header.push_back(std::string(kind_name(k)) + "_gap");
  }

  std::map<std::string, std::vector<double>> gaps;
  std::vector<double> ns_ok;
  json failures = json::array();

  for (double n : cfg.n_grid) {
    std::vector<std::string> row{fmt(n)};
    try {
      const Observation obs = Observation::from_mean(implied_mean(cfg, h, n), n);
      MleFit fref = ref.fit(*h.model, obs, h.theta_init, h.box, h.opt);
      if (!fref.converged) throw NotConvergedError("reference fit did not converge");
      for (int i = 0; i < p; ++i) row.push_back(fmt(fref.theta_hat[i]));
      ns_ok.push_back(n);
      for (auto k : cfg.kinds) {
        try {
          MleFit f = (k == ApproximationKind::Exact)
                         ? ref.fit(*h.model, obs, h.theta_init, h.box, h.opt)
                         : fit_mle(*h.model, obs, k, h.theta_init, h.box, h.opt);
          if (!f.converged) throw NotConvergedError("fit did not converge");
          const double gap = (f.theta_hat - fref.theta_hat).lpNorm<Eigen::Infinity>();
          for (int i = 0; i < p; ++i) row.push_back(fmt(f.theta_hat[i]));
          row.push_back(fmt(gap));
          gaps[kind_name(k)].push_back(gap);
        } catch (const std::runtime_error& e) {
          for (int i = 0; i < p; ++i) row.push_back("nan");
          row.push_back("nan");
          gaps[kind_name(k)].push_back(std::numeric_limits<double>::quiet_NaN());
          failures.push_back({{"n", n}, {"kind", kind_name(k)}, {"error", e.what()}});
        }
      }
      csv.rows.push_back(std::move(row));
    } catch (const std::runtime_error& e) {
      failures.push_back({{"n", n}, {"kind", "reference"}, {"error", e.what()}});
    }
  }

  json meta;
  meta["config"] = json::parse(cfg.to_json_text());
  meta["exact_reference"] = ref.name();
  meta["slope_window"] = "largest 5 grid values with nonzero gap";
  json slopes;
  for (auto k : cfg.kinds) {
    const auto& g = gaps[kind_name(k)];
    if (g.empty()) continue;
    slopes[kind_name(k)] = slope_to_json(fit_loglog_slope(ns_ok, g, 5));
  }
  meta["slopes"] = slopes;
  meta["failures"] = failures;

  ExperimentResult out;
  out.csv = csv.str();
  out.meta_json = meta.dump(2);
  out.ok = failures.empty();
  return out;
}

ExperimentResult run_sample(const ExperimentConfig& cfg) {
  HarnessSetup h = setup(cfg);
  const int p = h.model->signature().p;
  ExactReference ref(*h.model);

  ModelPtr generator = h.model;
  Vector gen_theta = h.theta0;
  if (cfg.data_model) {
    auto [gm, gt] = harness_model(*cfg.data_model, cfg.data_params, std::nullopt);
    generator = gm;
    gen_theta = gt;
  }

  CsvBuilder csv;
  csv.header = {"n", "kind", "replicates_ok"};
  for (int i = 0; i < p; ++i) csv.header.push_back("mean_z_" + std::to_string(i));
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      csv.header.push_back("cov_z_" + std::to_string(i) + std::to_string(j));
    }
  }

  json meta;
  meta["config"] = json::parse(cfg.to_json_text());
  meta["exact_reference"] = ref.name();
  json per_n = json::array();
  bool run_ok = true;

  for (double n : cfg.n_grid) {
    const int R = cfg.replicates;
    const int K = static_cast<int>(cfg.kinds.size());
    // theta_hat[kind][replicate]; NaN marks failure.
    std::vector<std::vector<Vector>> est(K, std::vector<Vector>(R));
    std::vector<char> failed(R, 0);

    Vector y0_ws;
    if (cfg.y0) {
      y0_ws = *cfg.y0;
    } else {
      RowVector zero = RowVector::Zero(h.model->signature().m);
      y0_ws = evaluate(*h.model, zero, h.theta0, block::grad_s).grad_s;
    }

    run_indexed_parallel(R, cfg.threads, [&](int r) {
      std::mt19937_64 rng = replicate_rng(cfg.seed, static_cast<std::uint64_t>(r));
      try {
        Vector x = cfg.degenerate ? Vector(n * y0_ws) : generator->sample(gen_theta, n, rng);
        const Observation obs(x, n);
        for (int k = 0; k < K; ++k) {
          MleFit f = (cfg.kinds[k] == ApproximationKind::Exact)
                         ? ref.fit(*h.model, obs, h.theta_init, h.box, h.opt)
                         : fit_mle(*h.model, obs, cfg.kinds[k], h.theta_init, h.box, h.opt);
          if (!f.converged) throw NotConvergedError("fit did not converge");
          est[k][r] = f.theta_hat;
        }
      } catch (const std::runtime_error&) {
        failed[r] = 1;
      }
    });

    int n_ok = 0;
    for (int r = 0; r < R; ++r) n_ok += failed[r] ? 0 : 1;
    const double failed_fraction = 1.0 - static_cast<double>(n_ok) / R;
    if (failed_fraction > 0.01) run_ok = false;

    json pairs = json::array();
    for (int a = 0; a < K; ++a) {
      for (int b = a + 1; b < K; ++b) {
        double max_gap = 0.0;
        for (int r = 0; r < R; ++r) {
          if (failed[r]) continue;
          max_gap = std::max(max_gap, (est[a][r] - est[b][r]).lpNorm<Eigen::Infinity>());
        }
        pairs.push_back({{"kinds", {kind_name(cfg.kinds[a]), kind_name(cfg.kinds[b])}},
                         {"max_gap", max_gap}});
      }
    }
    per_n.push_back({{"n", n},
                     {"failed", R - n_ok},
                     {"failed_fraction", failed_fraction},
                     {"pair_max_gaps", pairs}});

    for (int k = 0; k < K; ++k) {
      Vector mean = Vector::Zero(p);
      for (int r = 0; r < R; ++r) {
        if (!failed[r]) mean += std::sqrt(n) * (est[k][r] - h.theta0);
      }
      if (n_ok > 0) mean /= n_ok;
      Matrix cov = Matrix::Zero(p, p);
      for (int r = 0; r < R; ++r) {
        if (failed[r]) continue;
        const Vector z = std::sqrt(n) * (est[k][r] - h.theta0) - mean;
        cov += z * z.transpose();
      }
      if (n_ok > 1) cov /= (n_ok - 1);

      std::vector<std::string> row{fmt(n), kind_name(cfg.kinds[k]), std::to_string(n_ok)};
      for (int i = 0; i < p; ++i) row.push_back(fmt(mean[i]));
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) row.push_back(fmt(cov(i, j)));
      }
      csv.rows.push_back(std::move(row));
    }
  }

  meta["per_n"] = per_n;
  meta["status"] = run_ok ? "ok" : "failed";
  ExperimentResult out;
  out.csv = csv.str();
  out.meta_json = meta.dump(2);
  out.ok = run_ok;
  return out;
}

ExperimentResult run_posterior(const ExperimentConfig& cfg) {
  HarnessSetup h = setup(cfg);
  const int p = h.model->signature().p;
  if (p > 2) throw NotSupportedError("run_posterior: grid posteriors require p <= 2");
  ExactReference ref(*h.model);

  CsvBuilder csv;
  csv.header = {"n", "kind"};
  for (int i = 0; i < p; ++i) csv.header.push_back("mean_z_" + std::to_string(i));
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      csv.header.push_back("cov_z_" + std::to_string(i) + std::to_string(j));
    }
  }

  json meta;
  meta["config"] = json::parse(cfg.to_json_text());
  meta["exact_reference"] = ref.name();

  for (double n : cfg.n_grid) {
    const Observation obs = Observation::from_mean(implied_mean(cfg, h, n), n);
    const double w = cfg.grid_scale / std::sqrt(n);
    const int G = cfg.grid_points;

    // Uniform tensor grid on theta0 +- w, flat prior, trapezoid weights.
    std::vector<Vector> grid;
    std::vector<double> tweight;
    if (p == 1) {
      grid.reserve(G);
      for (int i = 0; i < G; ++i) {
        Vector t(1);
        t[0] = h.theta0[0] - w + 2.0 * w * i / (G - 1);
        grid.push_back(t);
        tweight.push_back(i == 0 || i == G - 1 ? 0.5 : 1.0);
      }
    } else {
      for (int i = 0; i < G; ++i) {
        for (int j = 0; j < G; ++j) {
          Vector t(2);
          t[0] = h.theta0[0] - w + 2.0 * w * i / (G - 1);
          t[1] = h.theta0[1] - w + 2.0 * w * j / (G - 1);
          grid.push_back(t);
          tweight.push_back((i == 0 || i == G - 1 ? 0.5 : 1.0) *
                            (j == 0 || j == G - 1 ? 0.5 : 1.0));
        }
      }
    }

    for (auto k : cfg.kinds) {
      std::vector<double> logl(grid.size(), -std::numeric_limits<double>::infinity());
      run_indexed_parallel(static_cast<int>(grid.size()), cfg.threads, [&](int i) {
        try {
          if (!h.model->theta_in_domain(grid[i])) return;
          logl[i] = (k == ApproximationKind::Exact)
                        ? ref.loglik(*h.model, grid[i], obs, cfg.quad)
                        : log_likelihood(*h.model, grid[i], obs, k, cfg.quad).total;
        } catch (const std::runtime_error&) {
          // leave -inf
        }
      });
      const double mx = *std::max_element(logl.begin(), logl.end());
      if (!std::isfinite(mx)) {
        throw GridUnderflowError("run_posterior: all grid log-likelihood values are -inf");
      }
      double wsum = 0.0;
      Vector mean = Vector::Zero(p);
      for (size_t i = 0; i < grid.size(); ++i) {
        const double wt = tweight[i] * std::exp(logl[i] - mx);
        wsum += wt;
        mean += wt * grid[i];
      }
      mean /= wsum;
      Matrix cov = Matrix::Zero(p, p);
      for (size_t i = 0; i < grid.size(); ++i) {
        const double wt = tweight[i] * std::exp(logl[i] - mx);
        const Vector d = grid[i] - mean;
        cov += wt * d * d.transpose();
      }
      cov /= wsum;

      // Moments of sqrt(n) (Theta - theta0).
      const Vector mean_z = std::sqrt(n) * (mean - h.theta0);
      const Matrix cov_z = n * cov;
      std::vector<std::string> row{fmt(n), kind_name(k)};
      for (int i = 0; i < p; ++i) row.push_back(fmt(mean_z[i]));
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) row.push_back(fmt(cov_z(i, j)));
      }
      csv.rows.push_back(std::move(row));
    }
  }

  ExperimentResult out;
  out.csv = csv.str();
  out.meta_json = meta.dump(2);
  return out;
}

ExperimentResult run_spa_vs_clt(const ExperimentConfig& cfg) {
  HarnessSetup h = setup(cfg);
  if (h.model->signature().m != 1) {
    throw NotSupportedError("run_spa_vs_clt: univariate models only");
  }
  if (!h.model->capabilities().has_closed_form_likelihood) {
    throw NotSupportedError("run_spa_vs_clt: model must have a closed-form density");
  }

  CsvBuilder csv;
  csv.header = {"s", "n", "y", "err_spa", "err_clt"};
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_s_spa, per_s_clt;

  for (double s : cfg.s_values) {
    RowVector sv = RowVector::Constant(1, s);
    CgfEvaluation ev = evaluate(*h.model, sv, h.theta0, block::grad_s);
    const Vector y = ev.grad_s;
    for (double n : cfg.n_grid) {
      const Observation obs = Observation::from_mean(y, n);
      const auto exact = h.model->closed_form_log_density(h.theta0, obs.x, obs.n);
      if (!exact) continue;
      const double spa =
          log_likelihood(*h.model, h.theta0, obs, ApproximationKind::Saddlepoint, cfg.quad).total;
      const double clt =
          log_likelihood(*h.model, h.theta0, obs, ApproximationKind::NormalApprox, cfg.quad).total;
      const double err_spa = std::abs(std::expm1(spa - *exact));
      const double err_clt = std::abs(std::expm1(clt - *exact));
      csv.rows.push_back({fmt(s), fmt(n), fmt(y[0]), fmt(err_spa), fmt(err_clt)});
      per_s_spa[fmt(s)].first.push_back(n);
      per_s_spa[fmt(s)].second.push_back(err_spa);
      per_s_clt[fmt(s)].first.push_back(n);
      per_s_clt[fmt(s)].second.push_back(err_clt);
    }
  }

  json meta;
  meta["config"] = json::parse(cfg.to_json_text());
  json slopes;
  for (auto& [s, data] : per_s_spa) {
    slopes[s] = {{"spa", slope_to_json(fit_loglog_slope(data.first, data.second, 5))},
                 {"clt", slope_to_json(fit_loglog_slope(per_s_clt[s].first,
                                                        per_s_clt[s].second, 5))}};
  }
  meta["slopes"] = slopes;
  ExperimentResult out;
  out.csv = csv.str();
  out.meta_json = meta.dump(2);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.experiment == "converge") return run_converge(cfg);
  if (cfg.experiment == "sample") return run_sample(cfg);
  if (cfg.experiment == "posterior") return run_posterior(cfg);
  if (cfg.experiment == "spa-vs-clt" || cfg.experiment == "spa_vs_clt") {
    return run_spa_vs_clt(cfg);
  }
  throw std::invalid_argument("unknown experiment kind: " + cfg.experiment);
}

void write_outputs(const ExperimentResult& result, const std::string& out_path) {
  {
    std::ofstream f(out_path + ".csv", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out_path + ".csv");
    f << result.csv;
  }
  {
    std::ofstream f(out_path + ".meta.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out_path + ".meta.json");
    f << result.meta_json;
  }
}

}  // namespace saddlemax
