#include "vaeas/vaeas.h"

#include <cmath>
#include <cstring>
#include <mutex>
#include <new>

#include "trainer.hpp"

struct vaeas_config {
  vaeas::RunConfig config;
};

struct vaeas_model {
  vaeas::TrainedModel trained;
};

namespace {

thread_local std::string g_last_error;
std::mutex g_log_mutex;
vaeas_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

vaeas_status status_for(vaeas::ErrorCode code) {
  using vaeas::ErrorCode;
  switch (code) {
    case ErrorCode::io:
    case ErrorCode::data_header:
    case ErrorCode::data_magic:
    case ErrorCode::data_truncated:
    case ErrorCode::data_dims:
    case ErrorCode::checkpoint:
      return VAEAS_ERR_DATA;
    case ErrorCode::numerical:
      return VAEAS_ERR_NUMERICAL;
    case ErrorCode::tape_mismatch:
      return VAEAS_ERR_INTERNAL;
    default:
      return VAEAS_ERR_CONFIG;
  }
}

template <typename F>
vaeas_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return VAEAS_OK;
  } catch (const vaeas::Error& e) {
    g_last_error = std::string(vaeas::error_code_name(e.code())) + ": " + e.what();
    return status_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return VAEAS_ERR_DATA;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return VAEAS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VAEAS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return VAEAS_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) vaeas::fail(vaeas::ErrorCode::config, std::string(what) + " must not be NULL");
}

vaeas::Logger logger() {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  if (!g_log_fn) return {};
  vaeas_log_fn fn = g_log_fn;
  void* user = g_log_user;
  return [fn, user](const std::string& m) { fn(m.c_str(), user); };
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
  else if (buf && cap > 0) vaeas::fail(vaeas::ErrorCode::config, "buffer too small");
}

std::string path_or_empty(const char* p) { return p ? std::string(p) : std::string(); }

}  // namespace

extern "C" {

const char* vaeas_version(void) { return "0.1.0"; }

const char* vaeas_last_error(void) { return g_last_error.c_str(); }

void vaeas_set_log_callback(vaeas_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

vaeas_status vaeas_config_new(vaeas_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new vaeas_config{};
  });
}

vaeas_status vaeas_config_load(const char* json_path, vaeas_config** out) {
  return guarded([&] {
    need(out, "out");
    need(json_path, "json_path");
    *out = new vaeas_config{vaeas::load_run_config(json_path)};
  });
}

void vaeas_config_free(vaeas_config* cfg) { delete cfg; }

vaeas_status vaeas_config_set(vaeas_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    cfg->config.set(key, value);
  });
}

vaeas_status vaeas_config_get(const vaeas_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    copy_out(cfg->config.get(key), buf, cap, needed);
  });
}

vaeas_status vaeas_config_to_json(const vaeas_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "cfg");
    copy_out(vaeas::to_json(cfg->config).dump(2), buf, cap, needed);
  });
}

vaeas_status vaeas_config_apply_profile(vaeas_config* cfg, const char* profile) {
  return guarded([&] {
    need(cfg, "cfg");
    need(profile, "profile");
    vaeas::apply_profile(cfg->config, profile);
  });
}

vaeas_status vaeas_config_validate(const vaeas_config* cfg) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->config.validate();
  });
}

size_t vaeas_config_key_count(void) { return vaeas::RunConfig::keys().size(); }

const char* vaeas_config_key(size_t index) {
  const auto& keys = vaeas::RunConfig::keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

vaeas_status vaeas_train(const vaeas_config* cfg, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    vaeas::run_train(cfg->config, out_dir, logger());
  });
}

vaeas_status vaeas_eval(const char* run_dir, int32_t nll_samples, size_t test_limit, size_t train_nll_limit,
                        const char* out_dir, vaeas_eval_report* report) {
  return guarded([&] {
    need(run_dir, "run_dir");
    vaeas::EvalOptions o;
    o.nll_samples = nll_samples;
    o.limit = test_limit;
    o.train_nll_limit = train_nll_limit;
    const auto r = vaeas::run_eval(run_dir, o, path_or_empty(out_dir), logger());
    if (report) {
      report->nll_test = r.nll_test;
      report->kl_test = r.kl_test;
      report->au = r.au;
      report->nll_train_recon = r.nll_train_recon;
      report->nll_train = r.nll_train;
      report->kl_train = r.kl_train;
      report->mi = r.mi;
      report->mi_fano = r.mi_fano;
      report->md = r.md;
      report->sc = r.sc;
      report->pe = r.pe;
      report->eval_samples = r.eval_samples;
    }
  });
}

vaeas_status vaeas_estimate_mi(const char* run_dir, const vaeas_estimate_options* options, const char* out_dir) {
  return guarded([&] {
    need(run_dir, "run_dir");
    vaeas::EstimateOptions o;
    if (options) {
      if (options->subsets && options->n_subsets > 0)
        o.subsets.assign(options->subsets, options->subsets + options->n_subsets);
      o.mine_steps = options->mine_steps;
      o.refit_epochs = options->refit_epochs;
      o.refit_lr = options->refit_lr;
      o.refit_batch = options->refit_batch;
      o.refit_lr = options->refit_lr;
      o.refit_batch = options->refit_batch;
      o.limit = options->limit;
    }
    vaeas::run_estimate_mi(run_dir, o, path_or_empty(out_dir), logger());
  });
}

vaeas_status vaeas_experiment(const char* id, const vaeas_config* base, const vaeas_experiment_options* options,
                              const char* out_dir) {
  return guarded([&] {
    need(id, "id");
    need(base, "base");
    need(out_dir, "out_dir");
    vaeas::ExperimentOptions o;
    if (options) {
      if (options->layers && options->n_layers) o.layers.assign(options->layers, options->layers + options->n_layers);
      if (options->alphas && options->n_alphas) o.alphas.assign(options->alphas, options->alphas + options->n_alphas);
      if (options->betas && options->n_betas) o.betas.assign(options->betas, options->betas + options->n_betas);
      if (options->subsets && options->n_subsets)
        o.subsets.assign(options->subsets, options->subsets + options->n_subsets);
      o.threads = options->threads;
      o.refit_epochs = options->refit_epochs;
    }
    vaeas::run_experiment(id, base->config, o, out_dir, logger());
  });
}

vaeas_status vaeas_model_load(const char* run_dir, vaeas_model** out) {
  return guarded([&] {
    need(run_dir, "run_dir");
    need(out, "out");
    auto run = vaeas::load_run(run_dir);
    *out = new vaeas_model{std::move(run.trained)};
  });
}

void vaeas_model_free(vaeas_model* model) { delete model; }

int32_t vaeas_model_latent_dim(const vaeas_model* model) {
  return model ? static_cast<int32_t>(model->trained.model.latent_dim) : 0;
}

int32_t vaeas_model_input_dim(const vaeas_model* model) {
  return model ? static_cast<int32_t>(model->trained.model.input_dim()) : 0;
}

vaeas_status vaeas_model_encode(const vaeas_model* model, const double* x, size_t n, double* mu, double* log_sigma) {
  return guarded([&] {
    need(model, "model");
    need(x, "x");
    need(mu, "mu");
    need(log_sigma, "log_sigma");
    const auto& m = model->trained.model;
    const Eigen::Map<const vaeas::Matrix> xs(x, m.input_dim(), static_cast<Eigen::Index>(n));
    const auto g = vaeas::encode_batch(m, xs);
    Eigen::Map<vaeas::Matrix>(mu, m.latent_dim, static_cast<Eigen::Index>(n)) = g.mu;
    Eigen::Map<vaeas::Matrix>(log_sigma, m.latent_dim, static_cast<Eigen::Index>(n)) = g.log_sigma;
  });
}

vaeas_status vaeas_model_importance_nll(const vaeas_model* model, const double* x, size_t n, int32_t samples,
                                        uint64_t seed, double* mean_nll) {
  return guarded([&] {
    need(model, "model");
    need(x, "x");
    need(mean_nll, "mean_nll");
    const auto& m = model->trained.model;
    const Eigen::Map<const vaeas::Matrix> xs(x, m.input_dim(), static_cast<Eigen::Index>(n));
    vaeas::SeededRng rng(seed);
    *mean_nll = vaeas::importance_nll(m, xs, samples, rng).mean;
  });
}

double vaeas_log_sum_exp(const double* v, size_t n) {
  if (!v || n == 0) return -INFINITY;
  return vaeas::log_sum_exp(Eigen::Map<const vaeas::Vector>(v, static_cast<Eigen::Index>(n)));
}

vaeas_status vaeas_gaussian_kl(const double* mu, const double* sigma, size_t d, double* kl) {
  return guarded([&] {
    need(mu, "mu");
    need(sigma, "sigma");
    need(kl, "kl");
    const auto dd = static_cast<Eigen::Index>(d);
    *kl = vaeas::gaussian_kl_to_standard(Eigen::Map<const vaeas::Vector>(mu, dd),
                                         Eigen::Map<const vaeas::Vector>(sigma, dd));
  });
}

vaeas_status vaeas_mi_from_logits(const double* logits, size_t v, size_t b, double* mi) {
  return guarded([&] {
    need(logits, "logits");
    need(mi, "mi");
    *mi = vaeas::mi_from_logits(
              Eigen::Map<const vaeas::Matrix>(logits, static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(b)))
              .value;
  });
}

}  // extern "C"
