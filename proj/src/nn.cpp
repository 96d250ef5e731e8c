#include "nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "binary_io.hpp"

namespace vaeas {

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  fail(ErrorCode::config, "unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Eigen::Index MlpParams::input_dim() const {
  require(!layers.empty(), ErrorCode::dimension, "empty MLP");
  return layers.front().weight.cols();
}

Eigen::Index MlpParams::output_dim() const {
  require(!layers.empty(), ErrorCode::dimension, "empty MLP");
  return layers.back().weight.rows();
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

MlpParams make_mlp(std::span<const Eigen::Index> dims, Activation hidden, Activation output,
                   SeededRng& rng) {
  require(dims.size() >= 2, ErrorCode::config, "make_mlp: need at least input and output widths");
  MlpParams p;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const Eigen::Index in = dims[k], out = dims[k + 1];
    require(in > 0 && out > 0, ErrorCode::config, "make_mlp: widths must be positive");
    Layer l;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight = sample_standard_normal(rng, out, in) * scale;
    l.bias = Vector::Zero(out);
    l.act = (k + 2 == dims.size()) ? output : hidden;
    p.layers.push_back(std::move(l));
  }
  return p;
}

namespace {

void apply_activation(Matrix& m, Activation a) {
  switch (a) {
    case Activation::linear: break;
    case Activation::tanh: m = m.array().tanh(); break;
    case Activation::relu: m = m.array().max(0.0); break;
    case Activation::sigmoid: m = m.unaryExpr([](double x) { return sigmoid(x); }); break;
  }
}

// d(act)/d(pre) expressed through the activation output y.
void scale_by_derivative(Matrix& grad, const Matrix& y, Activation a) {
  switch (a) {
    case Activation::linear: break;
    case Activation::tanh: grad.array() *= 1.0 - y.array().square(); break;
    case Activation::relu: grad.array() *= (y.array() > 0.0).cast<double>(); break;
    case Activation::sigmoid: grad.array() *= y.array() * (1.0 - y.array()); break;
  }
}

}  // namespace

ForwardResult mlp_forward(const MlpParams& params, const MatrixRef& x) {
  require(!params.layers.empty(), ErrorCode::dimension, "mlp_forward: empty MLP");
  require(x.rows() == params.input_dim(), ErrorCode::dimension,
          "mlp_forward: input has " + std::to_string(x.rows()) + " rows, expected " +
              std::to_string(params.input_dim()));
  ForwardResult r;
  r.tape.activations.reserve(params.layers.size() + 1);
  r.tape.activations.emplace_back(x);
  for (const auto& l : params.layers) {
    Matrix y = l.weight * r.tape.activations.back();
    y.colwise() += l.bias;
    apply_activation(y, l.act);
    r.tape.shapes.emplace_back(l.weight.rows(), l.weight.cols());
    r.tape.activations.push_back(std::move(y));
  }
  r.output = r.tape.activations.back();
  return r;
}

Matrix mlp_apply(const MlpParams& params, const MatrixRef& x) {
  require(!params.layers.empty(), ErrorCode::dimension, "mlp_apply: empty MLP");
  require(x.rows() == params.input_dim(), ErrorCode::dimension, "mlp_apply: input shape mismatch");
  Matrix h = x;
  for (const auto& l : params.layers) {
    Matrix y = l.weight * h;
    y.colwise() += l.bias;
    apply_activation(y, l.act);
    h = std::move(y);
  }
  return h;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  for (const auto& l : params.layers) {
    g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other) {
  require(weight.size() == other.weight.size(), ErrorCode::dimension, "MlpGrads: layer count mismatch");
  for (std::size_t k = 0; k < weight.size(); ++k) {
    weight[k] += other.weight[k];
    bias[k] += other.bias[k];
  }
  if (other.input.size() > 0) {
    if (input.size() == 0)
      input = other.input;
    else
      input += other.input;
  }
  return *this;
}

MlpGrads& MlpGrads::operator*=(double s) {
  for (auto& w : weight) w *= s;
  for (auto& b : bias) b *= s;
  input *= s;
  return *this;
}

MlpGrads mlp_backward(const MlpParams& params, const GradientTape& tape, const MatrixRef& out_grad,
                      BackwardMode mode) {
  const std::size_t n = params.layers.size();
  require(tape.activations.size() == n + 1 && tape.shapes.size() == n, ErrorCode::tape_mismatch,
          "mlp_backward: tape does not match network depth");
  for (std::size_t k = 0; k < n; ++k) {
    require(tape.shapes[k].first == params.layers[k].weight.rows() &&
                tape.shapes[k].second == params.layers[k].weight.cols(),
            ErrorCode::tape_mismatch, "mlp_backward: tape shapes do not match parameters");
  }
  const Matrix& y_last = tape.activations.back();
  require(out_grad.rows() == y_last.rows() && out_grad.cols() == y_last.cols(), ErrorCode::dimension,
          "mlp_backward: output gradient shape mismatch");

  const bool want_params = mode != BackwardMode::input_only;
  const bool want_input = mode != BackwardMode::params_only;
  MlpGrads g;
  if (want_params) {
    g.weight.resize(n);
    g.bias.resize(n);
  }
  Matrix delta = out_grad;
  for (std::size_t k = n; k-- > 0;) {
    const Layer& l = params.layers[k];
    scale_by_derivative(delta, tape.activations[k + 1], l.act);
    if (want_params) {
      g.weight[k].noalias() = delta * tape.activations[k].transpose();
      g.bias[k] = delta.rowwise().sum();
    }
    if (k > 0 || want_input) {
      Matrix prev = l.weight.transpose() * delta;
      delta = std::move(prev);
    }
  }
  if (want_input) g.input = std::move(delta);
  return g;
}

std::vector<std::span<double>> param_blocks(MlpParams& params) {
  std::vector<std::span<double>> out;
  for (auto& l : params.layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> param_blocks(const MlpParams& params) {
  std::vector<std::span<const double>> out;
  for (const auto& l : params.layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> grad_blocks(const MlpGrads& grads) {
  std::vector<std::span<const double>> out;
  for (std::size_t k = 0; k < grads.weight.size(); ++k) {
    out.emplace_back(grads.weight[k].data(), static_cast<std::size_t>(grads.weight[k].size()));
    out.emplace_back(grads.bias[k].data(), static_cast<std::size_t>(grads.bias[k].size()));
  }
  return out;
}

void AdamOptimizer::step(const std::vector<std::span<double>>& params,
                         const std::vector<std::span<const double>>& grads) {
  require(params.size() == grads.size(), ErrorCode::dimension, "Adam: params/grads block count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size())));
      v_.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size())));
    }
  }
  require(m_.size() == params.size(), ErrorCode::dimension, "Adam: block count changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].size() == grads[k].size() &&
                static_cast<Eigen::Index>(params[k].size()) == m_[k].size(),
            ErrorCode::dimension, "Adam: block shape mismatch");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Eigen::Map<Vector> p(params[k].data(), static_cast<Eigen::Index>(params[k].size()));
    Eigen::Map<const Vector> g(grads[k].data(), static_cast<Eigen::Index>(grads[k].size()));
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.epsilon);
  }
}

GradCheckReport grad_check(const std::vector<std::span<double>>& params,
                           const std::vector<std::span<const double>>& analytic,
                           const std::function<double()>& loss, const GradCheckOptions& options) {
  require(params.size() == analytic.size(), ErrorCode::dimension, "grad_check: block count mismatch");
  GradCheckReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    require(params[b].size() == analytic[b].size(), ErrorCode::dimension, "grad_check: block size mismatch");
    const std::size_t n = params[b].size();
    std::size_t stride = 1;
    if (options.max_per_block > 0 && n > options.max_per_block)
      stride = (n + options.max_per_block - 1) / options.max_per_block;
    for (std::size_t i = 0; i < n; i += stride) {
      double& w = params[b][i];
      const double saved = w;
      w = saved + options.step;
      const double up = loss();
      w = saved - options.step;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[b][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_block = b;
        report.worst_index = i;
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

namespace {
constexpr char kMlpMagic[8] = {'V', 'A', 'E', 'A', 'S', 'M', 'L', 'P'};
constexpr std::uint32_t kMlpVersion = 1;
}  // namespace

void write_mlp(std::ostream& out, const MlpParams& params) {
  out.write(kMlpMagic, sizeof kMlpMagic);
  binio::put_u32le(out, kMlpVersion);
  binio::put_u32le(out, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    binio::put_u32le(out, static_cast<std::uint32_t>(l.act));
    binio::put_u32le(out, static_cast<std::uint32_t>(l.weight.rows()));
    binio::put_u32le(out, static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) binio::put_f64le(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) binio::put_f64le(out, l.bias[r]);
  }
  if (!out) fail(ErrorCode::io, "write_mlp: stream error");
}

MlpParams read_mlp(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMlpMagic))
    fail(ErrorCode::checkpoint, "read_mlp: bad magic");
  const std::uint32_t version = binio::get_u32le(in);
  require(version == kMlpVersion, ErrorCode::checkpoint,
          "read_mlp: unsupported version " + std::to_string(version));
  const std::uint32_t count = binio::get_u32le(in);
  MlpParams p;
  for (std::uint32_t k = 0; k < count; ++k) {
    Layer l;
    const std::uint32_t act = binio::get_u32le(in);
    require(act <= 3, ErrorCode::checkpoint, "read_mlp: bad activation tag");
    l.act = static_cast<Activation>(act);
    const std::uint32_t rows = binio::get_u32le(in), cols = binio::get_u32le(in);
    if (!p.layers.empty())
      require(static_cast<Eigen::Index>(cols) == p.layers.back().weight.rows(), ErrorCode::checkpoint,
              "read_mlp: layer shapes do not chain");
    l.weight.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) l.weight(r, c) = binio::get_f64le(in);
    l.bias.resize(rows);
    for (std::uint32_t r = 0; r < rows; ++r) l.bias[r] = binio::get_f64le(in);
    p.layers.push_back(std::move(l));
  }
  return p;
}

}  // namespace vaeas
