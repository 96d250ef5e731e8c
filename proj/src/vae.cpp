#include "vae.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vaeas {

VaeModel make_vae(const VaeShape& shape, SeededRng& rng) {
  require(shape.encoder_layers >= 1 && shape.decoder_layers >= 1, ErrorCode::config,
          "make_vae: encoder and decoder need at least one layer");
  require(shape.latent_dim >= 1 && shape.hidden >= 1 && shape.input_dim >= 1, ErrorCode::config,
          "make_vae: dimensions must be positive");
  VaeModel m;
  m.latent_dim = shape.latent_dim;

  std::vector<Eigen::Index> enc{shape.input_dim};
  for (int k = 1; k < shape.encoder_layers; ++k) enc.push_back(shape.hidden);
  enc.push_back(2 * shape.latent_dim);
  m.encoder = make_mlp(enc, shape.hidden_act, Activation::linear, rng);

  std::vector<Eigen::Index> dec{shape.latent_dim};
  for (int k = 1; k < shape.decoder_layers; ++k) dec.push_back(shape.hidden);
  dec.push_back(shape.input_dim);
  m.decoder = make_mlp(dec, shape.hidden_act, Activation::linear, rng);
  return m;
}

GaussianBatch split_posterior(const MatrixRef& encoder_out, Eigen::Index latent_dim) {
  require(encoder_out.rows() == 2 * latent_dim, ErrorCode::dimension,
          "split_posterior: encoder output must have 2D rows");
  return {encoder_out.topRows(latent_dim), encoder_out.bottomRows(latent_dim)};
}

DiagonalGaussian encode(const VaeModel& model, const VectorRef& x) {
  require(x.size() == model.input_dim(), ErrorCode::dimension,
          "encode: input length " + std::to_string(x.size()) + ", expected " +
              std::to_string(model.input_dim()));
  require((x.array() == 0.0 || x.array() == 1.0).all(), ErrorCode::domain,
          "encode: input must be binary");
  const Matrix out = mlp_apply(model.encoder, x);
  return {out.col(0).head(model.latent_dim), out.col(0).tail(model.latent_dim)};
}

GaussianBatch encode_batch(const VaeModel& model, const MatrixRef& x) {
  return split_posterior(mlp_apply(model.encoder, x), model.latent_dim);
}

Vector reparameterize(const DiagonalGaussian& g, const VectorRef& eps) {
  require(g.mu.size() == eps.size() && g.log_sigma.size() == eps.size(), ErrorCode::dimension,
          "reparameterize: length mismatch");
  return g.mu.array() + g.log_sigma.array().exp() * eps.array();
}

Matrix reparameterize(const GaussianBatch& g, const MatrixRef& eps) {
  require(g.mu.rows() == eps.rows() && g.mu.cols() == eps.cols(), ErrorCode::dimension,
          "reparameterize: shape mismatch");
  return g.mu.array() + g.log_sigma.array().exp() * eps.array();
}

namespace {

inline double clamp_logit(double l) { return std::clamp(l, -kLogitClamp, kLogitClamp); }

}  // namespace

double bernoulli_log_likelihood(const VectorRef& logits, const VectorRef& x) {
  require(logits.size() == x.size(), ErrorCode::dimension, "bernoulli_log_likelihood: length mismatch");
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double l = clamp_logit(logits[i]);
    ll += x[i] * l - softplus(l);
  }
  return ll;
}

Vector bernoulli_log_likelihood_cols(const MatrixRef& logits, const MatrixRef& x) {
  require(logits.rows() == x.rows() && logits.cols() == x.cols(), ErrorCode::dimension,
          "bernoulli_log_likelihood_cols: shape mismatch");
  Vector out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out[j] = bernoulli_log_likelihood(logits.col(j), x.col(j));
  return out;
}

Matrix bernoulli_log_likelihood_grad(const MatrixRef& logits, const MatrixRef& x) {
  require(logits.rows() == x.rows() && logits.cols() == x.cols(), ErrorCode::dimension,
          "bernoulli_log_likelihood_grad: shape mismatch");
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double l = logits(i, j);
      g(i, j) = std::abs(l) > kLogitClamp ? 0.0 : x(i, j) - sigmoid(l);
    }
  return g;
}

double decode_bernoulli_ll(const VaeModel& model, const VectorRef& z, const VectorRef& x) {
  require(z.size() == model.latent_dim, ErrorCode::dimension, "decode_bernoulli_ll: latent length mismatch");
  require(model.decoder.output_dim() == x.size(), ErrorCode::dimension,
          "decode_bernoulli_ll: decoder output does not match image length");
  const Matrix logits = mlp_apply(model.decoder, z);
  return bernoulli_log_likelihood(logits.col(0), x);
}

Vector log_posterior_cols(const MatrixRef& z, const GaussianBatch& g) {
  require(z.rows() == g.mu.rows() && z.cols() == g.mu.cols(), ErrorCode::dimension,
          "log_posterior_cols: shape mismatch");
  const auto u = (z - g.mu).array() * (-g.log_sigma.array()).exp();
  return (-0.5 * u.square().colwise().sum() - g.log_sigma.array().colwise().sum()).transpose() -
         0.5 * kLog2Pi * static_cast<double>(z.rows());
}

Vector log_prior_cols(const MatrixRef& z) {
  return (-0.5 * z.array().square().colwise().sum()).transpose() - 0.5 * kLog2Pi * static_cast<double>(z.rows());
}

Vector kl_to_standard_cols(const GaussianBatch& g) {
  return 0.5 * (g.mu.array().square() + (2.0 * g.log_sigma.array()).exp() - 1.0 - 2.0 * g.log_sigma.array())
                   .colwise()
                   .sum()
                   .transpose();
}

ElboBatch elbo_batch(const VaeModel& model, const MatrixRef& x, int samples, SeededRng& rng) {
  require(samples >= 1, ErrorCode::config, "elbo_batch: need at least one sample");
  const GaussianBatch g = encode_batch(model, x);
  const Eigen::Index b = x.cols();
  Vector recon = Vector::Zero(b);
  for (int l = 0; l < samples; ++l) {
    const Matrix eps = sample_standard_normal(rng, model.latent_dim, b);
    const Matrix z = reparameterize(g, eps);
    recon += bernoulli_log_likelihood_cols(mlp_apply(model.decoder, z), x);
  }
  recon /= static_cast<double>(samples);
  const Vector kl = kl_to_standard_cols(g);

  ElboBatch out;
  out.per_example.resize(static_cast<std::size_t>(b));
  for (Eigen::Index j = 0; j < b; ++j) out.per_example[static_cast<std::size_t>(j)] = {recon[j], kl[j]};
  out.mean_recon_ll = recon.mean();
  out.mean_kl = kl.mean();
  return out;
}

}  // namespace vaeas
