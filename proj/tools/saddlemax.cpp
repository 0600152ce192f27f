#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "saddlemax/experiments.hpp"

namespace {

using namespace saddlemax;

std::map<std::string, double> parse_table(const std::string& kv) {
  std::map<std::string, double> out;
  std::stringstream ss(kv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("--params", "expected k=v pairs, got '" + item + "'");
    }
    out[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
  }
  return out;
}

Vector parse_csv_vector(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) vals.push_back(std::stod(item));
  }
  Vector v(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) v[static_cast<int>(i)] = vals[i];
  return v;
}

Box parse_box(const std::string& text, int p) {
  Box b;
  b.lo.resize(p);
  b.hi.resize(p);
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',') && i < p) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw CLI::ValidationError("--box", "expected lo:hi entries");
    }
    b.lo[i] = std::stod(item.substr(0, colon));
    b.hi[i] = std::stod(item.substr(colon + 1));
    ++i;
  }
  if (i != p) throw CLI::ValidationError("--box", "needs one lo:hi entry per parameter");
  return b;
}

void print_vector(const char* label, const Vector& v) {
  std::printf("%s", label);
  for (int i = 0; i < v.size(); ++i) std::printf("%s%.12g", i ? "," : "", v[i]);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saddlepoint-approximate likelihoods and MLEs for CGF-specified models"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string model_id, params_str, kind_str = "spa";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_path;
  app.add_option("--seed", seed, "RNG seed (experiments)");
  app.add_option("--threads", threads, "worker threads (results are thread-count independent)");
  app.add_option("--out", out_path, "output path prefix");

  auto add_model_opts = [&](CLI::App* sub) {
    sub->add_option("--model", model_id, "model id")->required();
    sub->add_option("--params", params_str, "flat parameter table k=v,...")->required();
  };

  // solve
  auto* solve = app.add_subcommand("solve", "solve the saddlepoint equation K0'(s)=y");
  std::string y_str;
  add_model_opts(solve);
  solve->add_option("--y", y_str, "implied sample mean y (csv)")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a factored log-likelihood");
  std::string x_str;
  double n_value = 1.0;
  add_model_opts(eval);
  eval->add_option("--kind", kind_str, "exact|spa|zeroth|normal");
  eval->add_option("--x", x_str, "observation x (csv)")->required();
  eval->add_option("--n", n_value, "convolution count n")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "maximize an approximate likelihood");
  std::string init_str, box_str;
  add_model_opts(fit);
  fit->add_option("--kind", kind_str, "exact|spa|zeroth|normal");
  fit->add_option("--x", x_str, "observation x (csv)")->required();
  fit->add_option("--n", n_value, "convolution count n")->required();
  fit->add_option("--init", init_str, "initial theta (csv)")->required();
  fit->add_option("--box", box_str, "search box lo:hi,... per parameter")->required();

  // experiment
  auto* experiment = app.add_subcommand("experiment", "run a configured experiment");
  std::string exp_kind, config_path;
  experiment->add_option("kind", exp_kind, "converge|sample|posterior|spa-vs-clt")->required();
  experiment->add_option("--config", config_path, "JSON config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve) {
      auto [model, theta] = models::make_model(model_id, parse_table(params_str));
      const Vector y = parse_csv_vector(y_str);
      SaddleResult r = solve_saddlepoint(*model, theta, y);
      print_vector("s_hat=", r.s_hat.transpose());
      std::printf("residual_norm=%.3e iterations=%d\n", r.residual_norm, r.iterations);
      std::printf("hess_at_saddle=\n");
      for (int i = 0; i < r.hess_at_saddle.rows(); ++i) {
        print_vector("  ", r.hess_at_saddle.row(i).transpose());
      }
      std::printf("sens_theta=\n");
      for (int i = 0; i < r.sens_theta.rows(); ++i) {
        print_vector("  ", r.sens_theta.row(i).transpose());
      }
    } else if (*eval) {
      auto [model, theta] = models::make_model(model_id, parse_table(params_str));
      const Observation obs(parse_csv_vector(x_str), n_value);
      const auto kind = kind_from_name(kind_str);
      FactoredLogLikelihood ll = log_likelihood(*model, theta, obs, kind);
      std::printf("kind=%s\n", kind_name(ll.kind));
      std::printf("log_lstar=%.12g\nlog_p=%.12g\ntotal=%.12g\n", ll.log_lstar, ll.log_p,
                  ll.total);
      RowVector g = grad_log_likelihood(*model, theta, obs, kind);
      print_vector("grad_theta=", g.transpose());
    } else if (*fit) {
      auto [model, theta] = models::make_model(model_id, parse_table(params_str));
      const Observation obs(parse_csv_vector(x_str), n_value);
      const auto kind = kind_from_name(kind_str);
      const Vector init = parse_csv_vector(init_str);
      const Box box = parse_box(box_str, model->signature().p);
      MleFit f = fit_mle(*model, obs, kind, init, box);
      print_vector("theta_hat=", f.theta_hat);
      std::printf("kind=%s converged=%d iterations=%d grad_norm=%.3e\n", kind_name(f.kind),
                  f.converged ? 1 : 0, f.iterations, f.grad_norm);
      if (f.near_singular_hessian) std::printf("warning=near_singular_hessian\n");
      return f.converged ? 0 : 3;
    } else if (*experiment) {
      ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
      if (!exp_kind.empty()) cfg.experiment = exp_kind;
      if (app.count("--seed")) cfg.seed = seed;
      if (app.count("--threads")) cfg.threads = threads;
      if (app.count("--out")) cfg.out = out_path;
      if (cfg.out.empty()) cfg.out = "experiment";
      ExperimentResult res = run_experiment(cfg);
      write_outputs(res, cfg.out);
      std::printf("wrote %s.csv and %s.meta.json (status=%s)\n", cfg.out.c_str(),
                  cfg.out.c_str(), res.ok ? "ok" : "failed");
      return res.ok ? 0 : 4;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
