#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "aux_softmax.hpp"
#include "data_io.hpp"
#include "metrics.hpp"
#include "run_config.hpp"
#include "vae.hpp"

namespace vaeas {

struct RunData {
  Dataset train;
  Dataset test;
  Matrix train_gray;  // only for dynamic binarization
};

RunData load_run_data(const RunConfig& config);

struct TrainedModel {
  VaeModel model;
  std::optional<Classifier> classifier;
  LabelCode labels;
};

// "VAEASMOD", u32 version, u32 latent dim, u32 has_classifier, encoder MLP,
// decoder MLP, then the classifier block when present.
void write_checkpoint(const std::filesystem::path& path, const VaeModel& model, const Classifier* cls);
TrainedModel read_checkpoint(const std::filesystem::path& path);

struct TrainResult {
  TrainedModel trained;
  std::vector<MetricsRow> rows;
};

using Logger = std::function<void(const std::string&)>;

/// Trains with the given data. When `out_dir` is non-empty it receives
/// config.json, metrics.csv, labels.bin, model.bin and reconstruction dumps.
TrainResult train(const RunConfig& config, const RunData& data, const std::filesystem::path& out_dir,
                  const Logger& log = {});

TrainResult run_train(const RunConfig& config, const std::filesystem::path& out_dir, const Logger& log = {});

struct LoadedRun {
  RunConfig config;
  TrainedModel trained;
};

// Reads config.json, model.bin and labels.bin from a training output directory.
LoadedRun load_run(const std::filesystem::path& run_dir);

struct EvalOptions {
  int nll_samples = 0;  // 0 = config eval-K
  std::size_t limit = 0;  // test images; 0 = all
  std::size_t train_nll_limit = 500;
};

/// Final evaluation; writes eval.csv and report.json into `out_dir` when non-empty.
EvalReport run_eval(const std::filesystem::path& run_dir, const EvalOptions& options,
                    const std::filesystem::path& out_dir, const Logger& log = {});

struct EstimateOptions {
  std::vector<std::size_t> subsets{100, 500, 0};  // 0 = full
  int aux_draws = 1;
  int mine_steps = 0;  // 0 = skip MINE
  int refit_epochs = 0;  // classifier epochs on the frozen encoder before the aux estimates
  double refit_lr = 0.0;  // 0 = the run's classifier learning rate
  int refit_batch = 0;    // 0 = the run's batch size
  std::size_t limit = 0;  // training images used; 0 = all
};

/// Aux, Fano, MC (per subset size) and optionally MINE estimates on the
/// training set. Writes estimates.csv into `out_dir` when non-empty.
std::vector<MetricsRow> run_estimate_mi(const std::filesystem::path& run_dir, const EstimateOptions& options,
                                        const std::filesystem::path& out_dir, const Logger& log = {});

struct ExperimentOptions {
  std::vector<int> layers{1, 2, 3, 4, 5};
  std::vector<double> alphas{0.0, 0.5, 1.0, 2.0, 5.0};
  std::vector<double> betas{0.5, 1.0, 2.0, 5.0};
  std::vector<std::size_t> subsets{100, 500, 0};
  int threads = 0;  // 0 = VAEAS_THREADS or hardware concurrency
  int refit_epochs = 0;
  double refit_lr = 0.0;
  int refit_batch = 0;
};

inline constexpr const char* kSummaryHeader =
    "point,param,value,epoch,nll_recon,kl,mi,mi_fano,md,sc,au,pe,nll_test,kl_test,au_test";

struct SummaryRow {
  std::string point;
  std::string param;
  double value = 0.0;
  int epoch = 0;
  double nll_recon = 0.0, kl = 0.0, mi = 0.0, mi_fano = 0.0, md = 0.0, sc = 0.0;
  int au = 0;
  double pe = 0.0, nll_test = 0.0, kl_test = 0.0;
  int au_test = 0;
};

std::string format_summary_row(const SummaryRow& row);

const std::vector<std::string>& experiment_ids();

/// Runs one grid experiment; one subdirectory per point plus summary.csv
/// (estimator-compare also writes estimates.csv).
std::vector<SummaryRow> run_experiment(const std::string& id, const RunConfig& base,
                                       const ExperimentOptions& options, const std::filesystem::path& out_dir,
                                       const Logger& log = {});

int worker_threads(int requested);

}  // namespace vaeas
