#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "nn.hpp"
#include "oracles.hpp"

using namespace vaeas;

namespace {

MlpParams toy_net(Activation hidden, Activation out, std::uint64_t seed, std::vector<Eigen::Index> dims = {4, 5, 3}) {
  SeededRng rng(seed);
  auto p = make_mlp(dims, hidden, out, rng);
  for (auto& l : p.layers) l.bias = sample_standard_normal(rng, l.bias.size()) * 0.3;
  return p;
}

double act(double x, Activation a) {
  switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    default: return x;
  }
}

}  // namespace

TEST_CASE("forward pass matches an explicit loop") {
  auto p = toy_net(Activation::tanh, Activation::sigmoid, 1);
  SeededRng rng(2);
  const Matrix x = sample_standard_normal(rng, 4, 6);
  const Matrix y = mlp_apply(p, x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> h(x.col(c).data(), x.col(c).data() + 4);
    for (const auto& l : p.layers) {
      std::vector<double> next(static_cast<std::size_t>(l.weight.rows()));
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        double s = l.bias[r];
        for (Eigen::Index k = 0; k < l.weight.cols(); ++k) s += l.weight(r, k) * h[static_cast<std::size_t>(k)];
        next[static_cast<std::size_t>(r)] = act(s, l.act);
      }
      h = next;
    }
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(y(r, c) == doctest::Approx(h[static_cast<std::size_t>(r)]).epsilon(1e-13));
  }
  CHECK(mlp_forward(p, x).output.isApprox(y));
  CHECK(p.parameter_count() == 4 * 5 + 5 + 5 * 3 + 3);
}

TEST_CASE("initialization scale") {
  SeededRng rng(11);
  std::vector<Eigen::Index> dims{400, 300};
  auto p = make_mlp(dims, Activation::tanh, Activation::linear, rng);
  const Matrix& w = p.layers[0].weight;
  const double var = w.array().square().mean();
  CHECK(var == doctest::Approx(1.0 / 400).epsilon(0.02));
  CHECK(p.layers[0].bias.isZero());
}

TEST_CASE("backward matches finite differences for every activation") {
  for (Activation a : {Activation::tanh, Activation::relu, Activation::sigmoid, Activation::linear}) {
    CAPTURE(activation_name(a));
    auto p = toy_net(a, Activation::linear, 3 + static_cast<std::uint64_t>(a), {4, 6, 5, 3});
    SeededRng rng(7);
    Matrix x = sample_standard_normal(rng, 4, 5);
    const Matrix c = sample_standard_normal(rng, 3, 5);  // loss = sum(c .* y)
    auto loss = [&] { return (c.array() * mlp_apply(p, x).array()).sum(); };
    auto fwd = mlp_forward(p, x);
    const MlpGrads g = mlp_backward(p, fwd.tape, c);
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
      for (Eigen::Index i = 0; i < p.layers[k].weight.size(); ++i) {
        const double num = oracle::central_diff(loss, p.layers[k].weight.data()[i]);
        CHECK(oracle::rel_error(g.weight[k].data()[i], num) < 1e-6);
      }
      for (Eigen::Index i = 0; i < p.layers[k].bias.size(); ++i) {
        const double num = oracle::central_diff(loss, p.layers[k].bias[i]);
        CHECK(oracle::rel_error(g.bias[k][i], num) < 1e-6);
      }
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double num = oracle::central_diff(loss, x.data()[i]);
      CHECK(oracle::rel_error(g.input.data()[i], num) < 1e-6);
    }
  }
}

TEST_CASE("backward modes") {
  auto p = toy_net(Activation::tanh, Activation::linear, 5);
  SeededRng rng(1);
  const Matrix x = sample_standard_normal(rng, 4, 3);
  auto fwd = mlp_forward(p, x);
  const Matrix dy = Matrix::Ones(3, 3);
  const auto full = mlp_backward(p, fwd.tape, dy);
  const auto params = mlp_backward(p, fwd.tape, dy, BackwardMode::params_only);
  const auto input = mlp_backward(p, fwd.tape, dy, BackwardMode::input_only);
  CHECK(params.input.size() == 0);
  CHECK(params.weight[0].isApprox(full.weight[0]));
  CHECK(input.weight.empty());
  CHECK(input.input.isApprox(full.input));
}

TEST_CASE("tape from another network is rejected") {
  auto p = toy_net(Activation::tanh, Activation::linear, 5);
  auto q = toy_net(Activation::tanh, Activation::linear, 5, {4, 7, 3});
  SeededRng rng(1);
  const Matrix x = sample_standard_normal(rng, 4, 2);
  auto fq = mlp_forward(q, x);
  try {
    mlp_backward(p, fq.tape, Matrix::Ones(3, 2));
    FAIL("expected tape_mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::tape_mismatch);
  }
  auto fp = mlp_forward(p, x);
  CHECK_THROWS_AS(mlp_backward(p, fp.tape, Matrix::Ones(2, 2)), Error);
  CHECK_THROWS_AS(mlp_apply(p, Matrix::Ones(5, 2)), Error);
}

TEST_CASE("grad accumulation helpers") {
  auto p = toy_net(Activation::tanh, Activation::linear, 8);
  auto z = MlpGrads::zeros_like(p);
  SeededRng rng(3);
  const Matrix x = sample_standard_normal(rng, 4, 3);
  auto fwd = mlp_forward(p, x);
  const auto g = mlp_backward(p, fwd.tape, Matrix::Ones(3, 3), BackwardMode::params_only);
  z += g;
  z += g;
  z *= 0.5;
  CHECK(z.weight[1].isApprox(g.weight[1]));
  CHECK(grad_blocks(z).size() == 4);
  CHECK(param_blocks(p).size() == 4);
}

TEST_CASE("adam matches a hand-computed update") {
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  AdamOptimizer opt(cfg);
  std::vector<double> w{1.0, -2.0};
  const std::vector<std::vector<double>> grads{{0.5, -1.0}, {0.25, 3.0}, {-1.0, 0.0}};
  double m[2] = {0, 0}, v[2] = {0, 0}, ref[2] = {1.0, -2.0};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const std::vector<double>& g = grads[t];
    opt.step({std::span<double>(w)}, {std::span<const double>(g)});
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[static_cast<std::size_t>(i)];
      v[i] = 0.999 * v[i] + 0.001 * g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)];
      const double mh = m[i] / (1 - std::pow(0.9, t + 1)), vh = v[i] / (1 - std::pow(0.999, t + 1));
      ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w[0] == doctest::Approx(ref[0]).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(ref[1]).epsilon(1e-14));
  }
  CHECK(opt.step_count() == 3);
  std::vector<double> other{1.0};
  CHECK_THROWS_AS(opt.step({std::span<double>(other)}, {std::span<const double>(other)}), Error);
}

TEST_CASE("adam minimizes a quadratic") {
  AdamOptimizer opt({0.05, 0.9, 0.999, 1e-8});
  std::vector<double> w{3.0, -4.0, 0.5};
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> g{2 * (w[0] - 1), 2 * (w[1] + 1), 2 * w[2]};
    opt.step({std::span<double>(w)}, {std::span<const double>(g)});
  }
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(w[1] == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(std::abs(w[2]) < 1e-3);
}

TEST_CASE("grad_check flags wrong gradients") {
  std::vector<double> w{0.3, -0.7};
  auto loss = [&] { return std::sin(w[0]) * w[1] * w[1]; };
  std::vector<double> good{std::cos(w[0]) * w[1] * w[1], 2 * std::sin(w[0]) * w[1]};
  auto r = grad_check({std::span<double>(w)}, {std::span<const double>(good)}, loss);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-7);
  CHECK(w[0] == 0.3);
  std::vector<double> bad = good;
  bad[1] *= 1.01;
  auto r2 = grad_check({std::span<double>(w)}, {std::span<const double>(bad)}, loss);
  CHECK_FALSE(r2.passed);
  CHECK(r2.worst_index == 1);
}

TEST_CASE("checkpoint round trip and corruption") {
  auto p = toy_net(Activation::relu, Activation::sigmoid, 21, {6, 4, 4, 2});
  std::stringstream ss;
  write_mlp(ss, p);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "VAEASMLP");
  std::stringstream in(bytes);
  const MlpParams q = read_mlp(in);
  REQUIRE(q.layers.size() == p.layers.size());
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    CHECK(q.layers[k].weight == p.layers[k].weight);
    CHECK(q.layers[k].bias == p.layers[k].bias);
    CHECK(q.layers[k].act == p.layers[k].act);
  }
  // weights are row-major in the file: first weight after the first layer header
  double first;
  std::memcpy(&first, bytes.data() + 8 + 4 + 4 + 12, 8);
  CHECK(first == p.layers[0].weight(0, 0));
  double second;
  std::memcpy(&second, bytes.data() + 8 + 4 + 4 + 12 + 8, 8);
  CHECK(second == p.layers[0].weight(0, 1));

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_mlp(truncated), Error);
  std::string wrong = bytes;
  wrong[0] = 'X';
  std::stringstream bad(wrong);
  try {
    read_mlp(bad);
    FAIL("expected checkpoint error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::checkpoint);
  }
}
