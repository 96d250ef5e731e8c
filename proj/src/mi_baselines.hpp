#pragma once

#include <functional>
#include <vector>

#include "core_math.hpp"
#include "nn.hpp"
#include "vae.hpp"

namespace vaeas {

struct McEstimatorConfig {
  std::size_t subset = 0;  // S; 0 = all points
  int draws_per_point = 1;
};

struct McEstimate {
  double mi = 0.0;
  double md = 0.0;
  double mean_kl = 0.0;     // closed form over the same subset
  double mi_stderr = 0.0;
  double md_stderr = 0.0;
  std::size_t subset = 0;
};

/// Aggregated-posterior Monte-Carlo estimate. A random subset of S posteriors
/// forms q(z) ~ (1/S) sum_j q(z|x_j); codes are drawn from the same subset, so
/// S = 1 gives MI = 0 and small S caps the estimate at ln S.
McEstimate mc_estimate(const GaussianBatch& posteriors, const McEstimatorConfig& config, SeededRng& rng);
McEstimate mc_estimate(const VaeModel& model, const MatrixRef& x, const McEstimatorConfig& config,
                       SeededRng& rng);

// log (1/S) sum_j q(z_i | x_j) for every column z_i, computed with GEMMs.
Vector log_aggregate_density(const MatrixRef& z, const GaussianBatch& components);

struct MineConfig {
  Eigen::Index hidden = 256;
  int hidden_layers = 2;
  Activation act = Activation::relu;
  Eigen::Index batch_size = 256;
  int steps = 2000;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
};

/// Statistics network T(x, z) over the stacked input [x; z].
struct MineNet {
  MlpParams net;
  Eigen::Index x_dim = 0;
  Eigen::Index z_dim = 0;
  MineConfig config;
  std::vector<double> objective_trace;  // per-step DV objective on the training batch
};

// Draws B paired samples as columns: (x, z) with x in the first rows.
using PairSampler = std::function<std::pair<Matrix, Matrix>(SeededRng&, Eigen::Index)>;

// mean T(joint) - log mean exp T(marginal)
double dv_objective(const VectorRef& t_joint, const VectorRef& t_marginal);

// Marginal pairs by permuting the z columns within the batch.
Matrix shuffled_pairs(const MatrixRef& x, const MatrixRef& z, SeededRng& rng);

// Value and gradients of the DV objective for one batch (gradient of the
// objective, i.e. ascent direction).
double dv_objective_and_grad(const MineNet& mine, const MatrixRef& joint, const MatrixRef& marginal,
                             MlpGrads* grads);

MineNet mine_train(const PairSampler& sampler, Eigen::Index x_dim, Eigen::Index z_dim,
                   const MineConfig& config, SeededRng& rng);

struct MineEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<double> per_batch;
};

MineEstimate mine_estimate(const MineNet& mine, const PairSampler& sampler, int batches,
                           Eigen::Index batch_size, SeededRng& rng);

// Pairs (x_i, z ~ q(z|x_i)) drawn uniformly from a dataset.
PairSampler vae_pair_sampler(const VaeModel& model, const Matrix& x);

}  // namespace vaeas
