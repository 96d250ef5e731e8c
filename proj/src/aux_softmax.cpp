#include "aux_softmax.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "binary_io.hpp"

namespace vaeas {

ClassifierMode parse_classifier_mode(const std::string& name) {
  if (name == "flat") return ClassifierMode::flat;
  if (name == "tree") return ClassifierMode::tree;
  fail(ErrorCode::config, "unknown classifier mode '" + name + "' (expected flat|tree)");
}

const char* classifier_mode_name(ClassifierMode mode) {
  return mode == ClassifierMode::flat ? "flat" : "tree";
}

int tree_depth(std::uint32_t num_categories) {
  require(num_categories >= 1, ErrorCode::domain, "tree_depth: need at least one category");
  int d = 0;
  while ((std::uint64_t{1} << d) < num_categories) ++d;
  return d;
}

bool LabelCode::path_bit(std::uint32_t category, int level) const {
  const int d = depth();
  require(level >= 0 && level < d, ErrorCode::domain, "path_bit: level out of range");
  return ((category >> (d - 1 - level)) & 1u) != 0;
}

std::vector<bool> LabelCode::path(std::uint32_t category) const {
  require(category < num_categories, ErrorCode::domain, "LabelCode::path: category out of range");
  std::vector<bool> bits(static_cast<std::size_t>(depth()));
  for (int v = 0; v < depth(); ++v) bits[static_cast<std::size_t>(v)] = path_bit(category, v);
  return bits;
}

std::size_t tree_node_index(std::uint32_t category, int level, int depth) {
  const std::uint64_t prefix = static_cast<std::uint64_t>(category) >> (depth - level);
  return static_cast<std::size_t>((std::uint64_t{1} << level) - 1 + prefix);
}

LabelCode assign_labels(std::size_t n, std::uint32_t num_categories, std::uint64_t seed) {
  require(num_categories >= 1 && num_categories <= n, ErrorCode::config,
          "assign_labels: need 1 <= V <= N (V=" + std::to_string(num_categories) +
              ", N=" + std::to_string(n) + ")");
  LabelCode code;
  code.num_categories = num_categories;
  code.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) code.labels[i] = static_cast<std::uint32_t>(i % num_categories);
  SeededRng rng = SeededRng::substream(seed, 0, 0, SeededRng::Purpose::labels);
  for (std::size_t i = n; i > 1; --i) std::swap(code.labels[i - 1], code.labels[rng.below(i)]);
  return code;
}

void write_labels(std::ostream& out, const LabelCode& code) {
  for (auto l : code.labels) binio::put_u32le(out, l);
  if (!out) fail(ErrorCode::io, "write_labels: stream error");
}

LabelCode read_labels(std::istream& in, std::uint32_t num_categories) {
  LabelCode code;
  code.num_categories = num_categories;
  unsigned char b[4];
  while (in.read(reinterpret_cast<char*>(b), 4)) {
    const std::uint32_t v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    require(v < num_categories, ErrorCode::checkpoint, "read_labels: label out of range");
    code.labels.push_back(v);
  }
  require(in.gcount() == 0, ErrorCode::checkpoint, "read_labels: trailing partial entry");
  return code;
}

Eigen::Index Classifier::input_dim() const {
  const Eigen::Index n = trunk.layers.empty() ? head.weight.cols() : trunk.input_dim();
  return quadratic ? n / 2 : n;
}

Classifier make_classifier(const ClassifierShape& shape, SeededRng& rng) {
  require(shape.layers >= 1, ErrorCode::config, "make_classifier: need at least one layer");
  require(shape.num_categories >= 1, ErrorCode::config, "make_classifier: need V >= 1");
  Classifier cls;
  cls.mode = shape.mode;
  cls.num_categories = shape.num_categories;
  cls.depth = tree_depth(shape.num_categories);
  cls.quadratic = shape.quadratic;

  const Eigen::Index in = shape.quadratic ? 2 * shape.latent_dim : shape.latent_dim;
  Eigen::Index features = in;
  if (shape.layers > 1) {
    std::vector<Eigen::Index> dims{in};
    for (int k = 1; k < shape.layers; ++k) dims.push_back(shape.hidden);
    cls.trunk = make_mlp(dims, shape.hidden_act, shape.hidden_act, rng);
    features = shape.hidden;
  }
  const Eigen::Index rows = shape.mode == ClassifierMode::flat
                                ? static_cast<Eigen::Index>(shape.num_categories)
                                : std::max<Eigen::Index>(1, (Eigen::Index{1} << cls.depth) - 1);
  cls.head.weight = sample_standard_normal(rng, rows, features) / std::sqrt(static_cast<double>(features));
  cls.head.bias = Vector::Zero(rows);
  cls.head.act = Activation::linear;
  return cls;
}

std::vector<std::span<const double>> ClassifierGrads::blocks() const {
  auto out = grad_blocks(trunk);
  out.emplace_back(head_weight.data(), static_cast<std::size_t>(head_weight.size()));
  out.emplace_back(head_bias.data(), static_cast<std::size_t>(head_bias.size()));
  return out;
}

ClassifierGrads& ClassifierGrads::operator+=(const ClassifierGrads& other) {
  trunk += other.trunk;
  head_weight += other.head_weight;
  head_bias += other.head_bias;
  if (other.input.size() > 0) {
    if (input.size() == 0)
      input = other.input;
    else
      input += other.input;
  }
  return *this;
}

std::vector<std::span<double>> param_blocks(Classifier& cls) {
  auto out = param_blocks(cls.trunk);
  out.emplace_back(cls.head.weight.data(), static_cast<std::size_t>(cls.head.weight.size()));
  out.emplace_back(cls.head.bias.data(), static_cast<std::size_t>(cls.head.bias.size()));
  return out;
}

ClassifierPass classifier_forward(const Classifier& cls, const MatrixRef& z,
                                  std::span<const std::uint32_t> labels) {
  require(z.rows() == cls.input_dim(), ErrorCode::dimension, "classifier: latent dimension mismatch");
  ClassifierPass pass;
  Matrix input;
  if (cls.quadratic) {
    pass.z = z;
    input.resize(2 * z.rows(), z.cols());
    input.topRows(z.rows()) = z;
    input.bottomRows(z.rows()) = z.array().square();
  }
  const MatrixRef x = cls.quadratic ? MatrixRef(input) : z;
  if (cls.trunk.layers.empty()) {
    pass.features = x;
  } else {
    auto fwd = mlp_forward(cls.trunk, x);
    pass.features = std::move(fwd.output);
    pass.trunk_tape = std::move(fwd.tape);
  }
  if (cls.mode == ClassifierMode::flat) {
    pass.logits.noalias() = cls.head.weight * pass.features;
    pass.logits.colwise() += cls.head.bias;
    return pass;
  }
  require(static_cast<Eigen::Index>(labels.size()) == z.cols(), ErrorCode::dimension,
          "tree classifier: one label per column required");
  pass.labels.assign(labels.begin(), labels.end());
  pass.logits.resize(cls.depth, z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const std::uint32_t c = labels[static_cast<std::size_t>(j)];
    require(c < cls.num_categories, ErrorCode::domain, "tree classifier: label out of range");
    for (int v = 0; v < cls.depth; ++v) {
      const auto node = static_cast<Eigen::Index>(tree_node_index(c, v, cls.depth));
      pass.logits(v, j) = cls.head.weight.row(node).dot(pass.features.col(j)) + cls.head.bias[node];
    }
  }
  return pass;
}

ClassifierGrads classifier_backward(const Classifier& cls, const ClassifierPass& pass,
                                    const MatrixRef& logit_grad, BackwardMode mode) {
  require(logit_grad.rows() == pass.logits.rows() && logit_grad.cols() == pass.logits.cols(),
          ErrorCode::dimension, "classifier_backward: gradient shape mismatch");
  const bool want_params = mode != BackwardMode::input_only;
  const bool want_input = mode != BackwardMode::params_only;
  ClassifierGrads g;
  Matrix feature_grad;
  if (cls.mode == ClassifierMode::flat) {
    if (want_params) {
      g.head_weight.noalias() = logit_grad * pass.features.transpose();
      g.head_bias = logit_grad.rowwise().sum();
    }
    feature_grad.noalias() = cls.head.weight.transpose() * logit_grad;
  } else {
    if (want_params) {
      g.head_weight = Matrix::Zero(cls.head.weight.rows(), cls.head.weight.cols());
      g.head_bias = Vector::Zero(cls.head.bias.size());
    }
    feature_grad = Matrix::Zero(pass.features.rows(), pass.features.cols());
    for (Eigen::Index j = 0; j < logit_grad.cols(); ++j) {
      const std::uint32_t c = pass.labels[static_cast<std::size_t>(j)];
      for (int v = 0; v < cls.depth; ++v) {
        const auto node = static_cast<Eigen::Index>(tree_node_index(c, v, cls.depth));
        const double d = logit_grad(v, j);
        if (want_params) {
          g.head_weight.row(node) += d * pass.features.col(j).transpose();
          g.head_bias[node] += d;
        }
        feature_grad.col(j) += d * cls.head.weight.row(node).transpose();
      }
    }
  }
  auto to_latent = [&](Matrix&& dx) {
    if (!cls.quadratic) return std::move(dx);
    const Eigen::Index d = pass.z.rows();
    return Matrix(dx.topRows(d) + 2.0 * (pass.z.array() * dx.bottomRows(d).array()).matrix());
  };
  if (cls.trunk.layers.empty()) {
    if (want_input) g.input = to_latent(std::move(feature_grad));
    return g;
  }
  if (!want_params && !want_input) return g;
  auto tg = mlp_backward(cls.trunk, pass.trunk_tape, feature_grad, mode);
  if (want_input) g.input = to_latent(std::move(tg.input));
  tg.input.resize(0, 0);
  if (want_params) g.trunk = std::move(tg);
  return g;
}

Vector true_label_log_prob(const Classifier& cls, const ClassifierPass& pass,
                           std::span<const std::uint32_t> labels) {
  const Eigen::Index b = pass.logits.cols();
  require(static_cast<Eigen::Index>(labels.size()) == b, ErrorCode::dimension,
          "true_label_log_prob: one label per column required");
  Vector out(b);
  if (cls.mode == ClassifierMode::flat) {
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto c = labels[static_cast<std::size_t>(j)];
      require(c < cls.num_categories, ErrorCode::domain, "true_label_log_prob: label out of range");
      out[j] = pass.logits(c, j) - log_sum_exp(pass.logits.col(j));
    }
    return out;
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto c = labels[static_cast<std::size_t>(j)];
    double lp = 0.0;
    for (int v = 0; v < cls.depth; ++v) {
      const bool left = ((c >> (cls.depth - 1 - v)) & 1u) != 0;
      lp += left ? log_sigmoid(pass.logits(v, j)) : log_sigmoid(-pass.logits(v, j));
    }
    out[j] = lp;
  }
  return out;
}

Vector classify_flat(const Classifier& cls, const VectorRef& z) {
  require(cls.mode == ClassifierMode::flat, ErrorCode::unsupported_mode, "classify_flat: classifier is in tree mode");
  const auto pass = classifier_forward(cls, z);
  return log_softmax(pass.logits.col(0)).array().exp();
}

double classify_tree_log(const Classifier& cls, const VectorRef& z, std::uint32_t category) {
  require(cls.mode == ClassifierMode::tree, ErrorCode::unsupported_mode, "classify_tree: classifier is in flat mode");
  require(category < (std::uint64_t{1} << cls.depth) || (cls.depth == 0 && category == 0), ErrorCode::domain,
          "classify_tree: invalid path for category " + std::to_string(category));
  Matrix features = cls.trunk.layers.empty() ? Matrix(z) : mlp_apply(cls.trunk, z);
  double lp = 0.0;
  for (int v = 0; v < cls.depth; ++v) {
    const auto node = static_cast<Eigen::Index>(tree_node_index(category, v, cls.depth));
    const double t = cls.head.weight.row(node).dot(features.col(0)) + cls.head.bias[node];
    const bool left = ((category >> (cls.depth - 1 - v)) & 1u) != 0;
    lp += left ? log_sigmoid(t) : log_sigmoid(-t);
  }
  return lp;
}

double classify_tree(const Classifier& cls, const VectorRef& z, std::uint32_t category) {
  return std::exp(classify_tree_log(cls, z, category));
}

double classifier_loss(const Classifier& cls, const MatrixRef& z, std::span<const std::uint32_t> labels) {
  const auto pass = classifier_forward(cls, z, labels);
  return -true_label_log_prob(cls, pass, labels).mean();
}

double classifier_loss_and_grad(const Classifier& cls, const MatrixRef& z, std::span<const std::uint32_t> labels,
                                ClassifierGrads& grads) {
  const auto pass = classifier_forward(cls, z, labels);
  const Eigen::Index b = z.cols();
  Matrix dce(pass.logits.rows(), b);
  if (cls.mode == ClassifierMode::flat) {
    for (Eigen::Index j = 0; j < b; ++j) dce.col(j) = log_softmax(pass.logits.col(j)).array().exp();
    for (Eigen::Index j = 0; j < b; ++j) dce(labels[static_cast<std::size_t>(j)], j) -= 1.0;
  } else {
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto c = labels[static_cast<std::size_t>(j)];
      for (int v = 0; v < cls.depth; ++v) {
        const bool left = ((c >> (cls.depth - 1 - v)) & 1u) != 0;
        const double s = sigmoid(pass.logits(v, j));
        dce(v, j) = left ? s - 1.0 : s;
      }
    }
  }
  dce /= static_cast<double>(b);
  grads = classifier_backward(cls, pass, dce, BackwardMode::params_only);
  return -true_label_log_prob(cls, pass, labels).mean();
}

double refit_classifier(const VaeModel& model, Classifier& cls, const MatrixRef& x,
                        std::span<const std::uint32_t> labels, const RefitConfig& config, SeededRng& rng) {
  require(static_cast<Eigen::Index>(labels.size()) == x.cols(), ErrorCode::dimension,
          "refit_classifier: one label per example required");
  require(config.epochs >= 0 && config.batch_size >= 1, ErrorCode::config, "refit_classifier: bad epochs/batch size");
  const GaussianBatch post = encode_batch(model, x);
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  AdamOptimizer opt(config.adam);
  double last = std::numeric_limits<double>::quiet_NaN();
  for (int e = 0; e < config.epochs; ++e) {
    if (config.decay)
      opt.set_learning_rate(config.adam.learning_rate * 0.5 * (1.0 + std::cos(M_PI * e / config.epochs)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t len = std::min(static_cast<std::size_t>(config.batch_size), n - start);
      GaussianBatch g{Matrix(post.mu.rows(), static_cast<Eigen::Index>(len)),
                      Matrix(post.mu.rows(), static_cast<Eigen::Index>(len))};
      std::vector<std::uint32_t> batch_labels(len);
      for (std::size_t k = 0; k < len; ++k) {
        const auto i = static_cast<Eigen::Index>(order[start + k]);
        g.mu.col(static_cast<Eigen::Index>(k)) = post.mu.col(i);
        g.log_sigma.col(static_cast<Eigen::Index>(k)) = post.log_sigma.col(i);
        batch_labels[k] = labels[order[start + k]];
      }
      const Matrix z = reparameterize(g, sample_standard_normal(rng, g.mu.rows(), g.mu.cols()));
      ClassifierGrads grads;
      const double loss = classifier_loss_and_grad(cls, z, batch_labels, grads);
      if (!std::isfinite(loss)) fail(ErrorCode::numerical, "classifier refit diverged");
      sum += loss * static_cast<double>(len);
      opt.step(param_blocks(cls), grads.blocks());
    }
    last = sum / static_cast<double>(n);
  }
  return last;
}

MiEstimate mi_from_logits(const MatrixRef& logits) {
  const double log_v = std::log(static_cast<double>(logits.rows()));
  double entropy = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Vector lp = log_softmax(logits.col(j));
    entropy -= (lp.array().exp() * lp.array()).sum();
  }
  entropy /= static_cast<double>(logits.cols());
  MiEstimate out;
  out.raw = log_v - entropy;
  if (out.raw < -1e-6 || out.raw > log_v + 1e-6)
    fail(ErrorCode::numerical, "MI estimate " + std::to_string(out.raw) + " outside [0, ln V]");
  out.value = std::clamp(out.raw, 0.0, log_v);
  return out;
}

MiEstimate estimate_mi(const Classifier& cls, const MatrixRef& z) {
  require(cls.mode == ClassifierMode::flat, ErrorCode::unsupported_mode,
          "estimate_mi needs the full label distribution; tree mode reports the Fano estimate only");
  return mi_from_logits(classifier_forward(cls, z).logits);
}

FanoEstimate fano_from_log_true(const VectorRef& log_true, std::uint32_t num_categories) {
  const double log_v = std::log(static_cast<double>(num_categories));
  double h = 0.0, pe = 0.0;
  for (Eigen::Index j = 0; j < log_true.size(); ++j) {
    const double p_err = std::clamp(-std::expm1(log_true[j]), 0.0, 1.0);
    h += binary_entropy(p_err);
    pe += p_err;
  }
  const double n = static_cast<double>(log_true.size());
  return {log_v - h / n, pe / n};
}

FanoEstimate estimate_mi_fano(const Classifier& cls, const MatrixRef& z, std::span<const std::uint32_t> labels) {
  const auto pass = classifier_forward(cls, z, labels);
  return fano_from_log_true(true_label_log_prob(cls, pass, labels), cls.num_categories);
}

double md_from_terms(const VectorRef& log_q, const VectorRef& log_p, const VectorRef& log_true,
                     std::uint32_t num_categories) {
  require(log_q.size() == log_p.size() && log_q.size() == log_true.size() && log_q.size() > 0,
          ErrorCode::dimension, "md_from_terms: length mismatch");
  const double floor = std::log(kProbabilityFloor);
  const double log_v = std::log(static_cast<double>(num_categories));
  return (log_q.array() - log_v - log_true.array().max(floor) - log_p.array()).mean();
}

namespace {

// Tiles each column `draws` times: column j*draws + d belongs to example j.
template <typename T>
std::vector<T> repeat_each(std::span<const T> v, int draws) {
  std::vector<T> out;
  out.reserve(v.size() * static_cast<std::size_t>(draws));
  for (const auto& x : v)
    for (int d = 0; d < draws; ++d) out.push_back(x);
  return out;
}

Matrix repeat_cols(const MatrixRef& m, int draws) {
  Matrix out(m.rows(), m.cols() * draws);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (int d = 0; d < draws; ++d) out.col(j * draws + d) = m.col(j);
  return out;
}

}  // namespace

double estimate_md(const VaeModel& model, const Classifier& cls, const MatrixRef& x,
                   std::span<const std::uint32_t> labels, int draws, SeededRng& rng) {
  require(draws >= 1, ErrorCode::config, "estimate_md: need at least one draw");
  require(static_cast<Eigen::Index>(labels.size()) == x.cols(), ErrorCode::dimension,
          "estimate_md: one label per example required");
  const GaussianBatch g0 = encode_batch(model, x);
  const GaussianBatch g{repeat_cols(g0.mu, draws), repeat_cols(g0.log_sigma, draws)};
  const auto rep_labels = repeat_each(labels, draws);
  const Matrix z = reparameterize(g, sample_standard_normal(rng, g.mu.rows(), g.mu.cols()));
  const auto pass = classifier_forward(cls, z, rep_labels);
  return md_from_terms(log_posterior_cols(z, g), log_prior_cols(z), true_label_log_prob(cls, pass, rep_labels),
                       cls.num_categories);
}

AuxEstimates aux_estimates(const VaeModel& model, const Classifier& cls, const MatrixRef& x,
                           std::span<const std::uint32_t> labels, int draws, SeededRng& rng,
                           Eigen::Index batch_size) {
  require(static_cast<Eigen::Index>(labels.size()) == x.cols(), ErrorCode::dimension,
          "aux_estimates: one label per example required");
  require(draws >= 1 && batch_size >= 1, ErrorCode::config, "aux_estimates: bad draws/batch size");
  const double log_v = std::log(static_cast<double>(cls.num_categories));
  const double floor = std::log(kProbabilityFloor);
  double entropy = 0.0, md = 0.0, sc = 0.0, h_fano = 0.0, pe = 0.0, kl = 0.0;
  std::size_t count = 0;
  for (Eigen::Index start = 0; start < x.cols(); start += batch_size) {
    const Eigen::Index b = std::min(batch_size, x.cols() - start);
    const GaussianBatch g = encode_batch(model, x.middleCols(start, b));
    kl += kl_to_standard_cols(g).sum();
    const auto batch_labels = labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(b));
    for (int d = 0; d < draws; ++d) {
      const Matrix z = reparameterize(g, sample_standard_normal(rng, g.mu.rows(), b));
      const auto pass = classifier_forward(cls, z, batch_labels);
      const Vector log_true = true_label_log_prob(cls, pass, batch_labels);
      if (cls.mode == ClassifierMode::flat) {
        for (Eigen::Index j = 0; j < b; ++j) {
          const Vector lp = log_softmax(pass.logits.col(j));
          entropy -= (lp.array().exp() * lp.array()).sum();
        }
      }
      const Vector log_q = log_posterior_cols(z, g);
      const Vector log_p = log_prior_cols(z);
      md += (log_q.array() - log_v - log_true.array().max(floor) - log_p.array()).sum();
      sc -= log_true.sum();
      for (Eigen::Index j = 0; j < b; ++j) {
        const double p_err = std::clamp(-std::expm1(log_true[j]), 0.0, 1.0);
        h_fano += binary_entropy(p_err);
        pe += p_err;
      }
      count += static_cast<std::size_t>(b);
    }
  }
  const double n = static_cast<double>(count);
  AuxEstimates out;
  out.mi = cls.mode == ClassifierMode::flat ? std::clamp(log_v - entropy / n, 0.0, log_v)
                                            : std::numeric_limits<double>::quiet_NaN();
  out.mi_fano = log_v - h_fano / n;
  out.md = md / n;
  out.sc = sc / n;
  out.pe = pe / n;
  out.mean_kl = kl / static_cast<double>(x.cols());
  return out;
}

void write_classifier(std::ostream& out, const Classifier& cls) {
  // bit 8 flags the quadratic input map
  binio::put_u32le(out, static_cast<std::uint32_t>(cls.mode) | (cls.quadratic ? 0x100u : 0u));
  binio::put_u32le(out, cls.num_categories);
  write_mlp(out, cls.trunk);
  MlpParams head;
  head.layers.push_back(cls.head);
  write_mlp(out, head);
}

Classifier read_classifier(std::istream& in) {
  Classifier cls;
  const std::uint32_t word = binio::get_u32le(in);
  const std::uint32_t mode = word & 0xFFu;
  require(mode <= 1 && (word & ~0x1FFu) == 0, ErrorCode::checkpoint, "read_classifier: bad mode");
  cls.mode = static_cast<ClassifierMode>(mode);
  cls.quadratic = (word & 0x100u) != 0;
  cls.num_categories = binio::get_u32le(in);
  require(cls.num_categories >= 1, ErrorCode::checkpoint, "read_classifier: V must be >= 1");
  cls.depth = tree_depth(cls.num_categories);
  cls.trunk = read_mlp(in);
  MlpParams head = read_mlp(in);
  require(head.layers.size() == 1, ErrorCode::checkpoint, "read_classifier: head must be one layer");
  cls.head = std::move(head.layers.front());
  return cls;
}

}  // namespace vaeas
