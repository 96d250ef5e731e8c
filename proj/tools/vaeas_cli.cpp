// Command-line front end; talks to the library only through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vaeas/vaeas.h"

namespace {

struct ConfigDeleter {
  void operator()(vaeas_config* c) const { vaeas_config_free(c); }
};
using ConfigPtr = std::unique_ptr<vaeas_config, ConfigDeleter>;

struct Failure {
  vaeas_status status;
  std::string message;
};

void check(vaeas_status s, const std::string& context) {
  if (s != VAEAS_OK) throw Failure{s, context + ": " + vaeas_last_error()};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

long parse_long(const std::string& s, const std::string& flag) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw Failure{VAEAS_ERR_CONFIG, flag + ": bad integer '" + s + "'"};
  return v;
}

// "1..5" or "1,2,3"
std::vector<int32_t> parse_int_list(const std::string& s, const std::string& flag) {
  std::vector<int32_t> out;
  for (const auto& part : split(s, ',')) {
    const auto dots = part.find("..");
    if (dots != std::string::npos) {
      const long lo = parse_long(part.substr(0, dots), flag), hi = parse_long(part.substr(dots + 2), flag);
      if (hi < lo) throw Failure{VAEAS_ERR_CONFIG, flag + ": empty range '" + part + "'"};
      for (long v = lo; v <= hi; ++v) out.push_back(static_cast<int32_t>(v));
    } else {
      out.push_back(static_cast<int32_t>(parse_long(part, flag)));
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) {
    char* end = nullptr;
    const double v = std::strtod(part.c_str(), &end);
    if (part.empty() || *end != '\0') throw Failure{VAEAS_ERR_CONFIG, flag + ": bad number '" + part + "'"};
    out.push_back(v);
  }
  return out;
}

// "100,500,full"; full (or 0) means every point
std::vector<size_t> parse_subsets(const std::string& s) {
  std::vector<size_t> out;
  for (const auto& part : split(s, ',')) {
    if (part == "full" || part == "all") {
      out.push_back(0);
      continue;
    }
    const long v = parse_long(part, "--S");
    if (v < 0) throw Failure{VAEAS_ERR_CONFIG, "--S: sizes must be positive"};
    out.push_back(static_cast<size_t>(v));
  }
  return out;
}

/// Config flags shared by train and experiment: one --<key> option per
/// configuration key, plus --config, --profile and --set key=value.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::string config_file;
  std::string profile;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config to start from (e.g. a run's config.json)");
    app->add_option("--profile", profile, "desk | paper-fig2 | paper-table2");
    app->add_option("--set", sets, "extra key=value overrides");
    for (size_t i = 0; i < vaeas_config_key_count(); ++i) {
      const std::string key = vaeas_config_key(i);
      app->add_option("--" + key, values[key]);
    }
  }

  ConfigPtr build() const {
    vaeas_config* raw = nullptr;
    if (!config_file.empty())
      check(vaeas_config_load(config_file.c_str(), &raw), "--config");
    else
      check(vaeas_config_new(&raw), "config");
    ConfigPtr cfg(raw);
    if (!profile.empty()) check(vaeas_config_apply_profile(cfg.get(), profile.c_str()), "--profile");
    for (const auto& [key, value] : values)
      if (!value.empty()) check(vaeas_config_set(cfg.get(), key.c_str(), value.c_str()), "--" + key);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Failure{VAEAS_ERR_CONFIG, "--set expects key=value, got '" + kv + "'"};
      const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
      check(vaeas_config_set(cfg.get(), key.c_str(), value.c_str()), "--set " + key);
    }
    check(vaeas_config_validate(cfg.get()), "config");
    return cfg;
  }
};

void log_to_stderr(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate VAEs with auxiliary-softmax MI estimates"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress output");
  app.set_version_flag("--version", vaeas_version());

  ConfigFlags train_flags;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train one model");
  train_flags.attach(train);
  train->add_option("--out-dir", train_out, "output directory")->required();

  std::string eval_run, eval_out;
  int eval_k = 0;
  size_t eval_limit = 0, eval_train_limit = 500;
  auto* eval = app.add_subcommand("eval", "final evaluation of a trained run");
  eval->add_option("--run-dir", eval_run, "training output directory")->required();
  eval->add_option("--out-dir", eval_out, "where eval.csv goes (default: the run directory)");
  eval->add_option("--eval-K", eval_k, "importance samples (default: the run's eval-K)");
  eval->add_option("--limit", eval_limit, "test images to evaluate (0 = all)");
  eval->add_option("--train-nll-limit", eval_train_limit, "training images for the importance-sampled train NLL");

  std::string est_run, est_out, est_subsets = "100,500,full";
  int est_mine = 0, est_refit = 0, est_refit_batch = 0;
  double est_refit_lr = 0.0;
  size_t est_limit = 0;
  auto* est = app.add_subcommand("estimate-mi", "aux / MC / MINE estimates on a trained run");
  est->add_option("--run-dir", est_run, "training output directory")->required();
  est->add_option("--out-dir", est_out, "where estimates.csv goes (default: the run directory)");
  est->add_option("--S", est_subsets, "MC subset sizes, e.g. 100,500,full");
  est->add_option("--mine-steps", est_mine, "MINE training steps (0 = skip)");
  est->add_option("--limit", est_limit, "training images to use (0 = all)");
  est->add_option("--refit-epochs", est_refit, "extra classifier epochs on the frozen encoder");
  est->add_option("--refit-lr", est_refit_lr, "refit learning rate (default: the run's classifier rate)");
  est->add_option("--refit-batch", est_refit_batch, "refit batch size (default: the run's batch)");

  ConfigFlags exp_flags;
  std::string exp_id, exp_out, exp_layers, exp_alphas, exp_betas, exp_subsets;
  int exp_threads = 0, exp_refit = 0, exp_refit_batch = 0;
  double exp_refit_lr = 0.0;
  auto* exp = app.add_subcommand("experiment", "run a named experiment grid");
  exp->add_option("id", exp_id, "random-collapse | decoder-depth | alpha-sweep | beta-sweep | estimator-compare")
      ->required();
  exp_flags.attach(exp);
  exp->add_option("--out-dir", exp_out, "output directory")->required();
  exp->add_option("--layers", exp_layers, "decoder depths, e.g. 1..5");
  exp->add_option("--alphas", exp_alphas, "alpha grid, e.g. 0,1,2");
  exp->add_option("--betas", exp_betas, "beta grid, e.g. 0.5,1,2,5");
  exp->add_option("--S", exp_subsets, "MC subset sizes, e.g. 100,500,full");
  exp->add_option("--threads", exp_threads, "parallel grid points (default: VAEAS_THREADS)");
  exp->add_option("--refit-epochs", exp_refit, "estimator-compare: extra classifier epochs before estimating");
  exp->add_option("--refit-lr", exp_refit_lr, "estimator-compare: refit learning rate");
  exp->add_option("--refit-batch", exp_refit_batch, "estimator-compare: refit batch size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : VAEAS_ERR_CONFIG;
  }
  if (!quiet) vaeas_set_log_callback(log_to_stderr, nullptr);

  try {
    if (*train) {
      ConfigPtr cfg = train_flags.build();
      check(vaeas_train(cfg.get(), train_out.c_str()), "train");
    } else if (*eval) {
      vaeas_eval_report r{};
      const std::string out = eval_out.empty() ? eval_run : eval_out;
      check(vaeas_eval(eval_run.c_str(), eval_k, eval_limit, eval_train_limit, out.c_str(), &r), "eval");
      std::printf("nll_test %.4f kl_test %.4f au %d nll_train_recon %.4f kl_train %.4f mi %.4f md %.4f sc %.4f\n",
                  r.nll_test, r.kl_test, r.au, r.nll_train_recon, r.kl_train, r.mi, r.md, r.sc);
    } else if (*est) {
      const auto subsets = parse_subsets(est_subsets);
      const std::string out = est_out.empty() ? est_run : est_out;
      const vaeas_estimate_options o{subsets.data(), subsets.size(), est_mine, est_refit,
                                     est_refit_lr, est_refit_batch, est_limit};
      check(vaeas_estimate_mi(est_run.c_str(), &o, out.c_str()),
            "estimate-mi");
    } else if (*exp) {
      ConfigPtr cfg = exp_flags.build();
      std::vector<int32_t> layers;
      std::vector<double> alphas, betas;
      std::vector<size_t> subsets;
      if (!exp_layers.empty()) layers = parse_int_list(exp_layers, "--layers");
      if (!exp_alphas.empty()) alphas = parse_double_list(exp_alphas, "--alphas");
      if (!exp_betas.empty()) betas = parse_double_list(exp_betas, "--betas");
      if (!exp_subsets.empty()) subsets = parse_subsets(exp_subsets);
      vaeas_experiment_options o{layers.data(), layers.size(), alphas.data(), alphas.size(), betas.data(),
                                 betas.size(), subsets.data(), subsets.size(), exp_threads, exp_refit, exp_refit_lr, exp_refit_batch};
      check(vaeas_experiment(exp_id.c_str(), cfg.get(), &o, exp_out.c_str()), "experiment");
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.status;
  }
  return 0;
}
