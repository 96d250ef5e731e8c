#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace vaeas {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t pos = 0;
      out = static_cast<T>(std::stod(v, &pos));
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      fail(ErrorCode::config, "--" + key + ": expected a number, got '" + v + "'");
    }
  } else {
    r = std::from_chars(v.data(), end, out);
    if (r.ec != std::errc() || r.ptr != end)
      fail(ErrorCode::config, "--" + key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  fail(ErrorCode::config, "--" + key + ": expected a boolean, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field num_field(T RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<T>(k, v); },
          [m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return fmt(c.*m);
            else
              return std::to_string(c.*m);
          }};
}

Field str_field(std::string RunConfig::*m) {
  return {[m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; },
          [m](const RunConfig& c) { return c.*m; }};
}

Field bool_field(bool RunConfig::*m) {
  return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"objective", {[](RunConfig& c, const std::string&, const std::string& v) { c.objective = parse_objective(v); },
                     [](const RunConfig& c) { return std::string(objective_name(c.objective)); }}},
      {"alpha", num_field(&RunConfig::alpha)},
      {"beta", num_field(&RunConfig::beta)},
      {"cls-weight", num_field(&RunConfig::classifier_weight)},
      {"joint-classifier", bool_field(&RunConfig::joint_classifier)},
      {"use-classifier", bool_field(&RunConfig::use_classifier)},
      {"latent", num_field(&RunConfig::latent)},
      {"hidden", num_field(&RunConfig::hidden)},
      {"enc-layers", num_field(&RunConfig::enc_layers)},
      {"dec-layers", num_field(&RunConfig::dec_layers)},
      {"cls-layers", num_field(&RunConfig::cls_layers)},
      {"cls-hidden", num_field(&RunConfig::cls_hidden)},
      {"activation", {[](RunConfig& c, const std::string&, const std::string& v) { c.activation = parse_activation(v); },
                      [](const RunConfig& c) { return std::string(activation_name(c.activation)); }}},
      {"labels-V", num_field(&RunConfig::labels_v)},
      {"classifier",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.classifier = parse_classifier_mode(v); },
        [](const RunConfig& c) { return std::string(classifier_mode_name(c.classifier)); }}},
      {"cls-features",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          if (v != "linear" && v != "quadratic")
            fail(ErrorCode::config, "cls-features must be linear or quadratic, got '" + v + "'");
          c.cls_quadratic = v == "quadratic";
        },
        [](const RunConfig& c) { return std::string(c.cls_quadratic ? "quadratic" : "linear"); }}},
      {"samples-L", num_field(&RunConfig::samples_l)},
      {"batch", num_field(&RunConfig::batch)},
      {"epochs", num_field(&RunConfig::epochs)},
      {"seed", num_field(&RunConfig::seed)},
      {"lr", {[](RunConfig& c, const std::string& k, const std::string& v) { c.adam.learning_rate = parse_number<double>(k, v); },
              [](const RunConfig& c) { return fmt(c.adam.learning_rate); }}},
      {"cls-lr", num_field(&RunConfig::cls_lr)},
      {"adam-beta1", {[](RunConfig& c, const std::string& k, const std::string& v) { c.adam.beta1 = parse_number<double>(k, v); },
                      [](const RunConfig& c) { return fmt(c.adam.beta1); }}},
      {"adam-beta2", {[](RunConfig& c, const std::string& k, const std::string& v) { c.adam.beta2 = parse_number<double>(k, v); },
                      [](const RunConfig& c) { return fmt(c.adam.beta2); }}},
      {"adam-eps", {[](RunConfig& c, const std::string& k, const std::string& v) { c.adam.epsilon = parse_number<double>(k, v); },
                    [](const RunConfig& c) { return fmt(c.adam.epsilon); }}},
      {"ema-decay", num_field(&RunConfig::ema_decay)},
      {"dataset", str_field(&RunConfig::dataset)},
      {"data-path", str_field(&RunConfig::data_path)},
      {"test-path", str_field(&RunConfig::test_path)},
      {"limit", num_field(&RunConfig::limit)},
      {"test-limit", num_field(&RunConfig::test_limit)},
      {"holdout", num_field(&RunConfig::holdout)},
      {"p-on", num_field(&RunConfig::p_on)},
      {"binarize", str_field(&RunConfig::binarize)},
      {"eval-K", num_field(&RunConfig::eval_k)},
      {"epoch-eval-K", num_field(&RunConfig::epoch_eval_k)},
      {"eval-every", num_field(&RunConfig::eval_every)},
      {"eval-limit", num_field(&RunConfig::eval_limit)},
      {"au-threshold", num_field(&RunConfig::au_threshold)},
      {"save-every", num_field(&RunConfig::save_every)},
      {"dump-recon", bool_field(&RunConfig::dump_recon)},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  fail(ErrorCode::config, "unknown configuration key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::config, msg); };
  check(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be >= 0");
  check(classifier_weight >= 0.0, "cls-weight must be >= 0");
  check(latent >= 1 && hidden >= 1, "latent and hidden must be >= 1");
  check(enc_layers >= 1 && dec_layers >= 1 && cls_layers >= 1, "layer counts must be >= 1");
  check(cls_hidden >= 0, "cls-hidden must be >= 0");
  check(samples_l >= 1, "samples-L must be >= 1");
  check(batch >= 1, "batch must be >= 1");
  check(epochs >= 0, "epochs must be >= 0");
  check(dataset == "mnist" || dataset == "omniglot" || dataset == "random",
        "dataset must be mnist|omniglot|random");
  check(dataset == "random" || !data_path.empty(), "--data-path is required for " + dataset);
  check(dataset != "random" || limit >= 1, "random dataset needs --limit >= 1");
  check(p_on > 0.0 && p_on < 1.0, "p-on must be in (0,1)");
  check(binarize == "threshold" || binarize == "dynamic", "binarize must be threshold|dynamic");
  check(eval_k >= 1 && epoch_eval_k >= 1, "eval sample counts must be >= 1");
  check(eval_every >= 0 && save_every >= 0, "eval-every/save-every must be >= 0");
  check(ema_decay >= 0.0 && ema_decay < 1.0, "ema-decay must be in [0,1)");
  check(adam.learning_rate > 0.0, "lr must be > 0");
  check(cls_lr >= 0.0, "cls-lr must be >= 0");
  check(use_classifier || objective == Objective::elbo, "the vae-as objective needs the classifier");
}

ObjectiveConfig RunConfig::objective_config() const {
  ObjectiveConfig o;
  o.objective = objective;
  o.alpha = alpha;
  o.beta = beta;
  o.classifier_weight = classifier_weight;
  o.samples = samples_l;
  o.joint_classifier = joint_classifier;
  return o;
}

std::uint32_t RunConfig::effective_labels(std::size_t n_train) const {
  const auto v = labels_v == 0 ? static_cast<std::uint32_t>(n_train) : labels_v;
  require(v >= 1 && v <= n_train, ErrorCode::config,
          "labels-V must satisfy 1 <= V <= N (V=" + std::to_string(v) + ", N=" + std::to_string(n_train) + ")");
  return v;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& k : RunConfig::keys()) j[k] = c.get(k);
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::config, "config JSON must be an object");
  RunConfig c;
  for (const auto& [k, v] : j.items()) {
    if (v.is_string())
      c.set(k, v.get<std::string>());
    else if (v.is_boolean())
      c.set(k, v.get<bool>() ? "true" : "false");
    else
      c.set(k, v.dump());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("bad config JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

void apply_profile(RunConfig& c, const std::string& profile) {
  if (profile == "desk") return;
  if (profile == "paper-fig2") {
    // MNIST estimation run: layers 2/3/2, width 500, D=40, batch 100, 120 epochs
    c.enc_layers = 2;
    c.dec_layers = 3;
    c.cls_layers = 2;
    c.hidden = 500;
    c.latent = 40;
    c.batch = 100;
    c.epochs = 120;
    c.limit = 55000;
    return;
  }
  if (profile == "paper-table2") {
    c.enc_layers = 2;
    c.dec_layers = 5;
    c.cls_layers = 2;
    c.hidden = 500;
    c.latent = 40;
    c.batch = 128;
    c.epochs = 300;
    c.limit = 55000;
    return;
  }
  fail(ErrorCode::config, "unknown profile '" + profile + "' (desk|paper-fig2|paper-table2)");
}

}  // namespace vaeas
