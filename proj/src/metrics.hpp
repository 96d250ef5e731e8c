#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aux_softmax.hpp"
#include "core_math.hpp"
#include "vae.hpp"

namespace vaeas {

struct NllResult {
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> per_example;
};

// Importance-sampled negative log-likelihood with q(z|x) as proposal:
// -[logsumexp_k(log p(x|z_k) + log p(z_k) - log q(z_k|x)) - ln K].
NllResult importance_nll(const VaeModel& model, const MatrixRef& x, int samples, SeededRng& rng);

struct ActiveUnitsReport {
  Vector covariance;  // per latent dimension, over the dataset
  double threshold = 0.01;
  int count = 0;
};

ActiveUnitsReport active_units(const MatrixRef& posterior_means, double threshold = 0.01);
ActiveUnitsReport active_units(const VaeModel& model, const MatrixRef& x, double threshold = 0.01);

struct EvalReport {
  double nll_test = 0.0;
  double kl_test = 0.0;
  int au = 0;
  double nll_train_recon = 0.0;  // reconstruction error only
  double nll_train = 0.0;        // importance-sampled
  double kl_train = 0.0;
  double mi = 0.0;
  double mi_fano = 0.0;
  double md = 0.0;
  double sc = 0.0;
  double pe = 0.0;
  int eval_samples = 0;
};

struct ReportOptions {
  int nll_samples = 4096;
  int aux_draws = 1;
  double au_threshold = 0.01;
  std::size_t train_nll_limit = 0;  // 0 = whole train set
};

EvalReport assemble_report(const VaeModel& model, const Classifier* cls, std::span<const std::uint32_t> labels,
                           const MatrixRef& train, const MatrixRef& test, const ReportOptions& options,
                           SeededRng& rng);

inline constexpr const char* kMetricsHeader = "epoch,split,estimator,nll,kl,mi,md,sc,au,pe,alpha,beta,V,seed";

/// One metrics CSV row; unset optionals are written as empty fields.
struct MetricsRow {
  int epoch = 0;
  std::string split = "train";
  std::string estimator = "aux";
  std::optional<double> nll, kl, mi, md, sc;
  std::optional<int> au;
  std::optional<double> pe;
  double alpha = 0.0;
  double beta = 0.0;
  std::uint32_t labels = 0;
  std::uint64_t seed = 0;
};

std::string format_metrics_row(const MetricsRow& row);
std::optional<double> finite_or_empty(double v);

}  // namespace vaeas
