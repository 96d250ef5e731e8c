/* C interface to the vaeas library. All functions return a vaeas_status;
 * on failure vaeas_last_error() describes the problem (per thread). */
#ifndef VAEAS_VAEAS_H
#define VAEAS_VAEAS_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  ifdef VAEAS_BUILDING_LIBRARY
#    define VAEAS_API __declspec(dllexport)
#  else
#    define VAEAS_API __declspec(dllimport)
#  endif
#else
#  define VAEAS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status values double as process exit codes. */
typedef enum vaeas_status {
  VAEAS_OK = 0,
  VAEAS_ERR_INTERNAL = 1,
  VAEAS_ERR_CONFIG = 2,    /* bad configuration or argument */
  VAEAS_ERR_DATA = 3,      /* unreadable or malformed input file, checkpoint or dataset */
  VAEAS_ERR_NUMERICAL = 4  /* training or estimation produced non-finite values */
} vaeas_status;

typedef struct vaeas_config vaeas_config;
typedef struct vaeas_model vaeas_model;

typedef void (*vaeas_log_fn)(const char* message, void* user);

VAEAS_API const char* vaeas_version(void);
VAEAS_API const char* vaeas_last_error(void);
/* Progress messages from training and evaluation; NULL silences them. */
VAEAS_API void vaeas_set_log_callback(vaeas_log_fn fn, void* user);

/* ---- configuration ---- */
VAEAS_API vaeas_status vaeas_config_new(vaeas_config** out);
VAEAS_API vaeas_status vaeas_config_load(const char* json_path, vaeas_config** out);
VAEAS_API void vaeas_config_free(vaeas_config* cfg);
VAEAS_API vaeas_status vaeas_config_set(vaeas_config* cfg, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *needed gets the
 * full length including the terminator. A non-empty buffer that is too small
 * is a VAEAS_ERR_CONFIG; pass buf NULL to query the length. */
VAEAS_API vaeas_status vaeas_config_get(const vaeas_config* cfg, const char* key, char* buf, size_t cap,
                                        size_t* needed);
VAEAS_API vaeas_status vaeas_config_to_json(const vaeas_config* cfg, char* buf, size_t cap, size_t* needed);
/* "desk", "paper-fig2" or "paper-table2". */
VAEAS_API vaeas_status vaeas_config_apply_profile(vaeas_config* cfg, const char* profile);
VAEAS_API vaeas_status vaeas_config_validate(const vaeas_config* cfg);
VAEAS_API size_t vaeas_config_key_count(void);
VAEAS_API const char* vaeas_config_key(size_t index);

/* ---- runs ---- */
VAEAS_API vaeas_status vaeas_train(const vaeas_config* cfg, const char* out_dir);

typedef struct vaeas_eval_report {
  double nll_test;
  double kl_test;
  int32_t au;
  double nll_train_recon;
  double nll_train;
  double kl_train;
  double mi; /* NaN when unavailable */
  double mi_fano;
  double md;
  double sc;
  double pe;
  int32_t eval_samples;
} vaeas_eval_report;

/* nll_samples 0 = the run's eval-K; test_limit 0 = whole test split. */
VAEAS_API vaeas_status vaeas_eval(const char* run_dir, int32_t nll_samples, size_t test_limit, size_t train_nll_limit,
                                  const char* out_dir, vaeas_eval_report* report);

typedef struct vaeas_estimate_options {
  const size_t* subsets; /* MC subset sizes, 0 meaning the full set; NULL = 100, 500, full */
  size_t n_subsets;
  int32_t mine_steps;   /* 0 skips MINE */
  int32_t refit_epochs; /* > 0: train a copy of the classifier on the frozen encoder first */
  double refit_lr;      /* 0 = the run's classifier learning rate */
  int32_t refit_batch;  /* 0 = the run's batch size */
  size_t limit;         /* training images used, 0 = all */
} vaeas_estimate_options;

/* Writes estimates.csv into out_dir. options may be NULL. */
VAEAS_API vaeas_status vaeas_estimate_mi(const char* run_dir, const vaeas_estimate_options* options,
                                         const char* out_dir);

typedef struct vaeas_experiment_options {
  const int32_t* layers; /* NULL or n == 0 selects the built-in grid */
  size_t n_layers;
  const double* alphas;
  size_t n_alphas;
  const double* betas;
  size_t n_betas;
  const size_t* subsets;
  size_t n_subsets;
  int32_t threads; /* 0 = VAEAS_THREADS or hardware concurrency */
  /* estimator-compare only, see vaeas_estimate_options */
  int32_t refit_epochs;
  double refit_lr;
  int32_t refit_batch;
} vaeas_experiment_options;

VAEAS_API vaeas_status vaeas_experiment(const char* id, const vaeas_config* base,
                                        const vaeas_experiment_options* options, const char* out_dir);

/* ---- trained models ---- */
VAEAS_API vaeas_status vaeas_model_load(const char* run_dir, vaeas_model** out);
VAEAS_API void vaeas_model_free(vaeas_model* model);
VAEAS_API int32_t vaeas_model_latent_dim(const vaeas_model* model);
VAEAS_API int32_t vaeas_model_input_dim(const vaeas_model* model);
/* x: n binary images, each input_dim doubles, contiguous. mu and log_sigma
 * receive n * latent_dim doubles, image-major. */
VAEAS_API vaeas_status vaeas_model_encode(const vaeas_model* model, const double* x, size_t n, double* mu,
                                          double* log_sigma);
VAEAS_API vaeas_status vaeas_model_importance_nll(const vaeas_model* model, const double* x, size_t n,
                                                  int32_t samples, uint64_t seed, double* mean_nll);

/* ---- numeric kernels ---- */
VAEAS_API double vaeas_log_sum_exp(const double* v, size_t n);
VAEAS_API vaeas_status vaeas_gaussian_kl(const double* mu, const double* sigma, size_t d, double* kl);
/* Classifier-entropy MI estimate from a V x B column-major logit matrix. */
VAEAS_API vaeas_status vaeas_mi_from_logits(const double* logits, size_t v, size_t b, double* mi);

#ifdef __cplusplus
}
#endif

#endif
