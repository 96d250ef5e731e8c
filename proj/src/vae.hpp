#pragma once

#include <vector>

#include "core_math.hpp"
#include "nn.hpp"

namespace vaeas {

/// Posterior q(z|x) = N(mu, diag(exp(log_sigma))^2) for one example.
struct DiagonalGaussian {
  Vector mu;
  Vector log_sigma;

  Vector sigma() const { return log_sigma.array().exp(); }
};

/// Posteriors for a batch, one example per column (D x B).
struct GaussianBatch {
  Matrix mu;
  Matrix log_sigma;

  Eigen::Index size() const { return mu.cols(); }
  DiagonalGaussian column(Eigen::Index j) const { return {mu.col(j), log_sigma.col(j)}; }
};

/// Encoder emits [mu; log_sigma] (2D rows); decoder emits per-pixel Bernoulli logits.
struct VaeModel {
  MlpParams encoder;
  MlpParams decoder;
  Eigen::Index latent_dim = 0;

  Eigen::Index input_dim() const { return encoder.input_dim(); }
};

struct VaeShape {
  Eigen::Index input_dim = 784;
  Eigen::Index latent_dim = 40;
  Eigen::Index hidden = 500;
  int encoder_layers = 2;
  int decoder_layers = 3;
  Activation hidden_act = Activation::tanh;
};

VaeModel make_vae(const VaeShape& shape, SeededRng& rng);

inline constexpr double kLogitClamp = 15.0;

GaussianBatch split_posterior(const MatrixRef& encoder_out, Eigen::Index latent_dim);

DiagonalGaussian encode(const VaeModel& model, const VectorRef& x);
GaussianBatch encode_batch(const VaeModel& model, const MatrixRef& x);

Vector reparameterize(const DiagonalGaussian& g, const VectorRef& eps);
Matrix reparameterize(const GaussianBatch& g, const MatrixRef& eps);

// sum_pixels x log p + (1-x) log(1-p), p = sigmoid(clamp(logit, +-15)).
double bernoulli_log_likelihood(const VectorRef& logits, const VectorRef& x);
Vector bernoulli_log_likelihood_cols(const MatrixRef& logits, const MatrixRef& x);
// d ll / d logit; zero where the clamp is active.
Matrix bernoulli_log_likelihood_grad(const MatrixRef& logits, const MatrixRef& x);

double decode_bernoulli_ll(const VaeModel& model, const VectorRef& z, const VectorRef& x);

// Per-column log q(z_j | x_j) and log p(z_j).
Vector log_posterior_cols(const MatrixRef& z, const GaussianBatch& g);
Vector log_prior_cols(const MatrixRef& z);
Vector kl_to_standard_cols(const GaussianBatch& g);

struct ElboTerms {
  double recon_ll = 0.0;
  double kl = 0.0;

  double elbo() const { return recon_ll - kl; }
};

struct ElboBatch {
  std::vector<ElboTerms> per_example;
  double mean_recon_ll = 0.0;
  double mean_kl = 0.0;

  double mean_elbo() const { return mean_recon_ll - mean_kl; }
};

// Monte-Carlo reconstruction term averaged over `samples` draws per example,
// KL in closed form.
ElboBatch elbo_batch(const VaeModel& model, const MatrixRef& x, int samples, SeededRng& rng);

}  // namespace vaeas
