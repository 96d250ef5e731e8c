#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "core_math.hpp"

namespace vaeas {

enum class Activation : std::uint32_t { linear = 0, tanh = 1, relu = 2, sigmoid = 3 };

Activation parse_activation(const std::string& name);
const char* activation_name(Activation a);

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::linear;
};

struct MlpParams {
  std::vector<Layer> layers;

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::size_t parameter_count() const;
};

// Builds a chain with widths dims[0] -> dims[1] -> ... ; hidden layers use
// `hidden`, the last layer `output`. Weights ~ N(0, 1/fan_in), biases zero.
MlpParams make_mlp(std::span<const Eigen::Index> dims, Activation hidden, Activation output,
                   SeededRng& rng);

/// Activations of a forward pass over a batch (one example per column).
/// activations[0] is the input, activations[k] the output of layer k-1.
struct GradientTape {
  std::vector<Matrix> activations;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
};

struct ForwardResult {
  Matrix output;
  GradientTape tape;
};

struct MlpGrads {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  static MlpGrads zeros_like(const MlpParams& params);
  MlpGrads& operator+=(const MlpGrads& other);
  MlpGrads& operator*=(double s);
};

enum class BackwardMode { params_and_input, params_only, input_only };

ForwardResult mlp_forward(const MlpParams& params, const MatrixRef& x);
Matrix mlp_apply(const MlpParams& params, const MatrixRef& x);

// Throws tape_mismatch if the tape was not produced by `params`' shapes.
MlpGrads mlp_backward(const MlpParams& params, const GradientTape& tape, const MatrixRef& out_grad,
                      BackwardMode mode = BackwardMode::params_and_input);

// Flat views over every parameter block, in layer order (weight then bias).
std::vector<std::span<double>> param_blocks(MlpParams& params);
std::vector<std::span<const double>> param_blocks(const MlpParams& params);
std::vector<std::span<const double>> grad_blocks(const MlpGrads& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with per-step bias correction. Moment buffers are lazily sized from the
/// first call; later calls must pass blocks of the same shapes in the same order.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);

  std::int64_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
  std::int64_t steps_ = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error so that near-zero entries are
  // judged on an absolute scale.
  double abs_floor = 1e-6;
  // Check at most this many entries per block (evenly strided); 0 = all.
  std::size_t max_per_block = 0;
};

// Compares `analytic` against central differences of `loss` taken by
// perturbing `params` in place. `params` and `analytic` must align block by block.
GradCheckReport grad_check(const std::vector<std::span<double>>& params,
                           const std::vector<std::span<const double>>& analytic,
                           const std::function<double()>& loss, const GradCheckOptions& options = {});

// Checkpoint block: "VAEASMLP", u32 version, u32 layer count, then per layer
// u32 activation, u32 rows, u32 cols, row-major f64 weights, f64 biases.
// All integers and floats little-endian.
void write_mlp(std::ostream& out, const MlpParams& params);
MlpParams read_mlp(std::istream& in);

}  // namespace vaeas
