#pragma once

#include <optional>
#include <span>

#include "aux_softmax.hpp"
#include "vae.hpp"

namespace vaeas {

enum class Objective { elbo, vae_as };

Objective parse_objective(const std::string& name);
const char* objective_name(Objective o);

struct ObjectiveConfig {
  Objective objective = Objective::vae_as;
  double alpha = 1.0;
  double beta = 1.0;
  double classifier_weight = 1.0;
  int samples = 1;
  // When set, the classifier parameters also receive the gradients of the
  // alpha/beta terms; by default they only see the cross-entropy.
  bool joint_classifier = false;
};

struct ObjectiveTerms {
  double loss = 0.0;          // -recon + alpha*MI + beta*MD + w*SC  (or -recon + KL for elbo)
  double encoder_loss = 0.0;  // the part whose gradient reaches encoder/decoder
  double recon_ll = 0.0;      // mean over examples and samples
  double kl = 0.0;            // mean closed-form KL(q(z|x)||p(z))
  double mi = 0.0;            // batch entropy estimate (flat); NaN in tree mode
  double mi_fano = 0.0;
  double md = 0.0;
  double sc = 0.0;
  double pe = 0.0;
};

struct ObjectiveResult {
  ObjectiveTerms terms;
  MlpGrads encoder;
  MlpGrads decoder;
  std::optional<ClassifierGrads> classifier;
};

// `cls` may be null (no auxiliary classifier; only valid for the elbo objective).
// `noise` holds the reparameterization draws, D x (B * samples); column
// l*B + j is draw l for example j.
ObjectiveResult vae_as_loss(const VaeModel& model, const Classifier* cls, const MatrixRef& x,
                            std::span<const std::uint32_t> labels, const ObjectiveConfig& config,
                            const MatrixRef& noise);

ObjectiveResult vae_as_loss(const VaeModel& model, const Classifier* cls, const MatrixRef& x,
                            std::span<const std::uint32_t> labels, const ObjectiveConfig& config,
                            SeededRng& rng);

}  // namespace vaeas
