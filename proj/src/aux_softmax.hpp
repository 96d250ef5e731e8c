#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "core_math.hpp"
#include "nn.hpp"
#include "vae.hpp"

namespace vaeas {

enum class ClassifierMode : std::uint32_t { flat = 0, tree = 1 };

ClassifierMode parse_classifier_mode(const std::string& name);
const char* classifier_mode_name(ClassifierMode mode);

// ceil(log2 V); 0 for V == 1.
int tree_depth(std::uint32_t num_categories);

/// Sample index -> category id. In tree mode a category's path is the
/// big-endian binary form of its id, `depth()` bits wide.
struct LabelCode {
  std::uint32_t num_categories = 1;
  std::vector<std::uint32_t> labels;

  int depth() const { return tree_depth(num_categories); }
  // Bit taken at `level` (0 = root) on the way to `category`; 1 = left.
  bool path_bit(std::uint32_t category, int level) const;
  std::vector<bool> path(std::uint32_t category) const;
};

// V == N gives a random permutation; V < N a shuffled balanced surjection
// (bucket sizes differ by at most one).
LabelCode assign_labels(std::size_t n, std::uint32_t num_categories, std::uint64_t seed);

// N little-endian u32 entries, no header.
void write_labels(std::ostream& out, const LabelCode& code);
LabelCode read_labels(std::istream& in, std::uint32_t num_categories);

// Heap index of the internal node visited at `level` on the way to `category`.
std::size_t tree_node_index(std::uint32_t category, int level, int depth);

/// s_w(e|z): a trunk MLP (possibly empty) followed by a head. Flat mode: the
/// head is a dense V x H layer feeding a softmax. Tree mode: the head holds one
/// row per internal node (2^depth - 1) and only rows on a leaf's path are used.
/// With `quadratic` the network sees [z; z*z] instead of z.
struct Classifier {
  ClassifierMode mode = ClassifierMode::flat;
  std::uint32_t num_categories = 1;
  int depth = 0;
  bool quadratic = false;
  MlpParams trunk;
  Layer head;

  Eigen::Index input_dim() const;  // latent dimension
  Eigen::Index feature_dim() const { return head.weight.cols(); }
};

struct ClassifierShape {
  Eigen::Index latent_dim = 40;
  Eigen::Index hidden = 500;
  int layers = 2;  // linear maps including the head
  std::uint32_t num_categories = 1;
  ClassifierMode mode = ClassifierMode::flat;
  Activation hidden_act = Activation::tanh;
  bool quadratic = false;
};

Classifier make_classifier(const ClassifierShape& shape, SeededRng& rng);

struct ClassifierGrads {
  MlpGrads trunk;
  Matrix head_weight;
  Vector head_bias;
  Matrix input;

  std::vector<std::span<const double>> blocks() const;
  ClassifierGrads& operator+=(const ClassifierGrads& other);
};

std::vector<std::span<double>> param_blocks(Classifier& cls);

/// Forward pass over a batch of latent codes (D x B). Flat: logits is V x B.
/// Tree: logits is depth x B, the node logits along each column's label path.
struct ClassifierPass {
  Matrix z;  // kept for the quadratic input map
  GradientTape trunk_tape;
  Matrix features;
  Matrix logits;
  std::vector<std::uint32_t> labels;  // tree mode only
};

ClassifierPass classifier_forward(const Classifier& cls, const MatrixRef& z,
                                  std::span<const std::uint32_t> labels = {});
ClassifierGrads classifier_backward(const Classifier& cls, const ClassifierPass& pass,
                                    const MatrixRef& logit_grad, BackwardMode mode);

// log s(e = label | z) per column, from an existing pass.
Vector true_label_log_prob(const Classifier& cls, const ClassifierPass& pass,
                           std::span<const std::uint32_t> labels);

Vector classify_flat(const Classifier& cls, const VectorRef& z);
double classify_tree(const Classifier& cls, const VectorRef& z, std::uint32_t category);
double classify_tree_log(const Classifier& cls, const VectorRef& z, std::uint32_t category);

// Mean cross-entropy -log s(e_i | z) over the columns of z.
double classifier_loss(const Classifier& cls, const MatrixRef& z, std::span<const std::uint32_t> labels);

// Same loss plus its gradient with respect to the classifier parameters.
double classifier_loss_and_grad(const Classifier& cls, const MatrixRef& z, std::span<const std::uint32_t> labels,
                                ClassifierGrads& grads);

struct RefitConfig {
  int epochs = 0;
  Eigen::Index batch_size = 100;
  AdamConfig adam;
  // Cosine decay of the learning rate to zero over the refit.
  bool decay = true;
};

// Further classifier training on codes drawn from a frozen encoder.
// Returns the mean cross-entropy of the last epoch.
double refit_classifier(const VaeModel& model, Classifier& cls, const MatrixRef& x,
                        std::span<const std::uint32_t> labels, const RefitConfig& config, SeededRng& rng);

struct MiEstimate {
  double value = 0.0;  // clamped to [0, ln V]
  double raw = 0.0;
};

// ln V - mean entropy of the classifier distribution. Flat mode only.
MiEstimate estimate_mi(const Classifier& cls, const MatrixRef& z);
MiEstimate mi_from_logits(const MatrixRef& logits);

struct FanoEstimate {
  double mi = 0.0;  // ln V - mean H_b(P_e)
  double pe = 0.0;  // mean prediction-error probability
};

FanoEstimate estimate_mi_fano(const Classifier& cls, const MatrixRef& z, std::span<const std::uint32_t> labels);
FanoEstimate fano_from_log_true(const VectorRef& log_true, std::uint32_t num_categories);

inline constexpr double kProbabilityFloor = 1e-12;

// mean[log q(z|x_i) - ln V - log max(s(e_i|z), 1e-12) - log p(z)]
double md_from_terms(const VectorRef& log_q, const VectorRef& log_p, const VectorRef& log_true,
                     std::uint32_t num_categories);

// Draws `draws` codes per example from the encoder and evaluates md_from_terms.
double estimate_md(const VaeModel& model, const Classifier& cls, const MatrixRef& x,
                   std::span<const std::uint32_t> labels, int draws, SeededRng& rng);

/// Classifier-based estimates over a whole dataset with a frozen model.
struct AuxEstimates {
  double mi = 0.0;      // flat only, NaN in tree mode
  double mi_fano = 0.0;
  double md = 0.0;
  double sc = 0.0;
  double pe = 0.0;
  double mean_kl = 0.0;
};

AuxEstimates aux_estimates(const VaeModel& model, const Classifier& cls, const MatrixRef& x,
                           std::span<const std::uint32_t> labels, int draws, SeededRng& rng,
                           Eigen::Index batch_size = 500);

void write_classifier(std::ostream& out, const Classifier& cls);
Classifier read_classifier(std::istream& in);

}  // namespace vaeas
