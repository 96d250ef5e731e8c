#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "aux_softmax.hpp"
#include "nn.hpp"
#include "vae_as.hpp"

namespace vaeas {

/// Every knob of a run. Keys accepted by `set` match the CLI flag names
/// without the leading dashes (e.g. "labels-V", "enc-layers").
struct RunConfig {
  // objective
  Objective objective = Objective::vae_as;
  double alpha = 1.0;
  double beta = 1.0;
  double classifier_weight = 1.0;
  bool joint_classifier = false;
  bool use_classifier = true;

  // architecture
  int latent = 40;
  int hidden = 500;
  int enc_layers = 2;
  int dec_layers = 3;
  int cls_layers = 2;
  int cls_hidden = 0;  // 0 = same as hidden
  Activation activation = Activation::tanh;
  std::uint32_t labels_v = 0;  // 0 = one label per training image
  ClassifierMode classifier = ClassifierMode::flat;
  bool cls_quadratic = false;  // classifier input [z; z*z]

  // training
  int samples_l = 1;
  int batch = 100;
  int epochs = 30;
  std::uint64_t seed = 7;
  AdamConfig adam{};
  double cls_lr = 0.0;  // classifier learning rate; 0 = lr
  double ema_decay = 0.9;

  // data
  std::string dataset = "mnist";  // mnist | omniglot | random
  std::string data_path;
  std::string test_path;
  std::size_t limit = 5000;
  std::size_t test_limit = 0;
  std::size_t holdout = 500;  // test images split off when no test-path is given
  double p_on = 0.5;
  std::string binarize = "threshold";  // threshold | dynamic

  // evaluation
  int eval_k = 4096;
  int epoch_eval_k = 64;
  int eval_every = 1;
  std::size_t eval_limit = 500;  // test images used for per-epoch NLL
  double au_threshold = 0.01;
  int save_every = 0;
  bool dump_recon = true;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  void validate() const;
  ObjectiveConfig objective_config() const;
  std::uint32_t effective_labels(std::size_t n_train) const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Named presets: "desk" (the defaults), "paper-fig2", "paper-table2".
void apply_profile(RunConfig& c, const std::string& profile);

}  // namespace vaeas
