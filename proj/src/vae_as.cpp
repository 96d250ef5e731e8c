#include "vae_as.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vaeas {

Objective parse_objective(const std::string& name) {
  if (name == "elbo") return Objective::elbo;
  if (name == "vae-as") return Objective::vae_as;
  fail(ErrorCode::config, "unknown objective '" + name + "' (expected elbo|vae-as)");
}

const char* objective_name(Objective o) { return o == Objective::elbo ? "elbo" : "vae-as"; }

namespace {

Matrix tile_cols(const MatrixRef& m, int times) {
  Matrix out(m.rows(), m.cols() * times);
  for (int t = 0; t < times; ++t) out.middleCols(t * m.cols(), m.cols()) = m;
  return out;
}

Matrix fold_cols(const MatrixRef& m, int times) {
  const Eigen::Index b = m.cols() / times;
  Matrix out = m.leftCols(b);
  for (int t = 1; t < times; ++t) out += m.middleCols(t * b, b);
  return out;
}

}  // namespace

ObjectiveResult vae_as_loss(const VaeModel& model, const Classifier* cls, const MatrixRef& x,
                            std::span<const std::uint32_t> labels, const ObjectiveConfig& config,
                            const MatrixRef& noise) {
  require(config.alpha >= 0.0 && config.beta >= 0.0, ErrorCode::config, "alpha and beta must be non-negative");
  require(config.samples >= 1, ErrorCode::config, "need at least one sample per example");
  require(cls != nullptr || config.objective == Objective::elbo, ErrorCode::config,
          "the vae-as objective needs an auxiliary classifier");
  const int draws = config.samples;
  const Eigen::Index b = x.cols();
  const Eigen::Index ns = b * draws;
  const Eigen::Index d = model.latent_dim;
  require(noise.rows() == d && noise.cols() == ns, ErrorCode::dimension, "vae_as_loss: noise shape mismatch");
  if (cls) require(static_cast<Eigen::Index>(labels.size()) == b, ErrorCode::dimension,
                   "vae_as_loss: one label per example required");
  const double inv_ns = 1.0 / static_cast<double>(ns);
  const double inv_b = 1.0 / static_cast<double>(b);

  ObjectiveResult result;
  ObjectiveTerms& t = result.terms;

  auto enc = mlp_forward(model.encoder, x);
  const GaussianBatch g = split_posterior(enc.output, d);
  const GaussianBatch gr{tile_cols(g.mu, draws), tile_cols(g.log_sigma, draws)};
  const Matrix sigma_r = gr.log_sigma.array().exp();
  const Matrix z = gr.mu.array() + sigma_r.array() * noise.array();
  const Matrix xr = tile_cols(x, draws);

  auto dec = mlp_forward(model.decoder, z);
  const Vector ll = bernoulli_log_likelihood_cols(dec.output, xr);
  t.recon_ll = ll.mean();
  const Matrix dlogits = -inv_ns * bernoulli_log_likelihood_grad(dec.output, xr);
  auto dec_grads = mlp_backward(model.decoder, dec.tape, dlogits, BackwardMode::params_and_input);
  Matrix dz = std::move(dec_grads.input);
  dec_grads.input.resize(0, 0);
  result.decoder = std::move(dec_grads);

  t.kl = kl_to_standard_cols(g).mean();
  t.encoder_loss = -t.recon_ll;
  Matrix dmu = Matrix::Zero(d, b);
  Matrix dlog_sigma = Matrix::Zero(d, b);
  Matrix dlog_sigma_r = Matrix::Zero(d, ns);

  if (config.objective == Objective::elbo) {
    t.encoder_loss += t.kl;
    dmu += inv_b * g.mu;
    dlog_sigma += inv_b * ((2.0 * g.log_sigma.array()).exp() - 1.0).matrix();
  }

  t.mi = std::numeric_limits<double>::quiet_NaN();
  t.mi_fano = t.md = t.sc = t.pe = std::numeric_limits<double>::quiet_NaN();
  if (cls) {
    std::vector<std::uint32_t> labels_r;
    labels_r.reserve(static_cast<std::size_t>(ns));
    for (int l = 0; l < draws; ++l) labels_r.insert(labels_r.end(), labels.begin(), labels.end());

    const auto pass = classifier_forward(*cls, z, labels_r);
    const Vector log_true = true_label_log_prob(*cls, pass, labels_r);
    const double log_v = std::log(static_cast<double>(cls->num_categories));
    const double floor = std::log(kProbabilityFloor);
    t.sc = -log_true.mean();
    const FanoEstimate fano = fano_from_log_true(log_true, cls->num_categories);
    t.mi_fano = fano.mi;
    t.pe = fano.pe;
    const Vector log_q = log_posterior_cols(z, gr);
    const Vector log_p = log_prior_cols(z);
    t.md = md_from_terms(log_q, log_p, log_true, cls->num_categories);

    // d(-log s_true)/d logits, per column
    Matrix dce(pass.logits.rows(), ns);
    Matrix probs;
    Vector entropy;
    if (cls->mode == ClassifierMode::flat) {
      probs.resize(pass.logits.rows(), ns);
      entropy.resize(ns);
      for (Eigen::Index j = 0; j < ns; ++j) {
        const Vector lp = log_softmax(pass.logits.col(j));
        probs.col(j) = lp.array().exp();
        entropy[j] = -(probs.col(j).array() * lp.array()).sum();
      }
      dce = probs;
      for (Eigen::Index j = 0; j < ns; ++j) dce(labels_r[static_cast<std::size_t>(j)], j) -= 1.0;
      const double mi_raw = log_v - entropy.mean();
      if (mi_raw < -1e-6 || mi_raw > log_v + 1e-6)
        fail(ErrorCode::numerical, "MI estimate " + std::to_string(mi_raw) + " outside [0, ln V]");
      t.mi = std::clamp(mi_raw, 0.0, log_v);
    } else {
      for (Eigen::Index j = 0; j < ns; ++j) {
        const auto c = labels_r[static_cast<std::size_t>(j)];
        for (int v = 0; v < cls->depth; ++v) {
          const bool left = ((c >> (cls->depth - 1 - v)) & 1u) != 0;
          const double s = sigmoid(pass.logits(v, j));
          dce(v, j) = left ? s - 1.0 : s;
        }
      }
    }

    const Matrix dlogits_ce = (config.classifier_weight * inv_ns) * dce;

    if (config.objective == Objective::vae_as) {
      Matrix dpen = Matrix::Zero(pass.logits.rows(), ns);
      if (config.alpha > 0.0) {
        if (cls->mode == ClassifierMode::flat) {
          if (t.mi > 0.0 && t.mi < log_v) {
            for (Eigen::Index j = 0; j < ns; ++j)
              dpen.col(j) += (config.alpha * inv_ns) *
                             (probs.col(j).array() * (probs.col(j).array().log() + entropy[j])).matrix();
          }
        } else {
          // d/dlog s of -H_b(1 - s): -s * log((1-s)/s)
          for (Eigen::Index j = 0; j < ns; ++j) {
            const double s = std::exp(log_true[j]);
            const double p_err = std::max(-std::expm1(log_true[j]), kProbabilityFloor);
            const double dmi_dlogs = -s * (std::log(p_err) - log_true[j]) * inv_ns;
            // d log s / d logits = -dce
            dpen.col(j) -= config.alpha * dmi_dlogs * dce.col(j);
          }
        }
      }
      if (config.beta > 0.0) {
        for (Eigen::Index j = 0; j < ns; ++j)
          if (log_true[j] > floor) dpen.col(j) += (config.beta * inv_ns) * dce.col(j);
        dz += (config.beta * inv_ns) * z;
        dlog_sigma_r.array() -= config.beta * inv_ns;
      }
      const double mi_term = cls->mode == ClassifierMode::flat ? t.mi : t.mi_fano;
      t.encoder_loss += config.alpha * mi_term + config.beta * t.md;

      auto pen = classifier_backward(*cls, pass, dpen,
                                     config.joint_classifier ? BackwardMode::params_and_input
                                                             : BackwardMode::input_only);
      dz += pen.input;
      auto ce = classifier_backward(*cls, pass, dlogits_ce, BackwardMode::params_only);
      if (config.joint_classifier) {
        pen.input.resize(0, 0);
        ce += pen;
      }
      result.classifier = std::move(ce);
    } else {
      result.classifier = classifier_backward(*cls, pass, dlogits_ce, BackwardMode::params_only);
    }
  }

  // reparameterization: z = mu + exp(log_sigma) * eps
  dmu += fold_cols(dz, draws);
  dlog_sigma += fold_cols((dz.array() * sigma_r.array() * noise.array()).matrix() + dlog_sigma_r, draws);

  Matrix denc(2 * d, b);
  denc.topRows(d) = dmu;
  denc.bottomRows(d) = dlog_sigma;
  result.encoder = mlp_backward(model.encoder, enc.tape, denc, BackwardMode::params_only);

  t.loss = t.encoder_loss;
  if (cls && config.objective == Objective::vae_as) t.loss += config.classifier_weight * t.sc;
  return result;
}

ObjectiveResult vae_as_loss(const VaeModel& model, const Classifier* cls, const MatrixRef& x,
                            std::span<const std::uint32_t> labels, const ObjectiveConfig& config,
                            SeededRng& rng) {
  const Matrix noise = sample_standard_normal(rng, model.latent_dim, x.cols() * config.samples);
  return vae_as_loss(model, cls, x, labels, config, noise);
}

}  // namespace vaeas
