#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "aux_softmax.hpp"
#include "oracles.hpp"

using namespace vaeas;

namespace {

Classifier make(ClassifierMode mode, std::uint32_t v, int layers, std::uint64_t seed, Eigen::Index d = 3,
                Eigen::Index hidden = 6) {
  SeededRng rng(seed);
  ClassifierShape s;
  s.latent_dim = d;
  s.hidden = hidden;
  s.layers = layers;
  s.num_categories = v;
  s.mode = mode;
  auto c = make_classifier(s, rng);
  c.head.bias = sample_standard_normal(rng, c.head.bias.size()) * 0.2;
  return c;
}

Classifier zeroed(Classifier c) {
  for (auto& l : c.trunk.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  c.head.weight.setZero();
  c.head.bias.setZero();
  return c;
}

// Trains a classifier on labelled points with plain Adam on the cross-entropy.
void fit(Classifier& c, const Matrix& z, const std::vector<std::uint32_t>& labels, int steps, double lr) {
  AdamOptimizer opt({lr, 0.9, 0.999, 1e-8});
  for (int t = 0; t < steps; ++t) {
    const auto pass = classifier_forward(c, z, labels);
    Matrix dl(pass.logits.rows(), pass.logits.cols());
    const double inv = 1.0 / static_cast<double>(z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const auto y = labels[static_cast<std::size_t>(j)];
      if (c.mode == ClassifierMode::flat) {
        dl.col(j) = softmax(pass.logits.col(j)) * inv;
        dl(y, j) -= inv;
      } else {
        for (int v = 0; v < c.depth; ++v) {
          const bool left = ((y >> (c.depth - 1 - v)) & 1u) != 0;
          dl(v, j) = (sigmoid(pass.logits(v, j)) - (left ? 1.0 : 0.0)) * inv;
        }
      }
    }
    const auto g = classifier_backward(c, pass, dl, BackwardMode::params_only);
    opt.step(param_blocks(c), g.blocks());
  }
}

double accuracy(const Classifier& c, const Matrix& z, const std::vector<std::uint32_t>& labels) {
  int ok = 0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    std::uint32_t best = 0;
    double best_lp = -INFINITY;
    for (std::uint32_t k = 0; k < c.num_categories; ++k) {
      const double lp = c.mode == ClassifierMode::flat ? std::log(classify_flat(c, z.col(j))[k])
                                                       : classify_tree_log(c, z.col(j), k);
      if (lp > best_lp) {
        best_lp = lp;
        best = k;
      }
    }
    ok += best == labels[static_cast<std::size_t>(j)];
  }
  return static_cast<double>(ok) / static_cast<double>(z.cols());
}

// Well-separated clusters on a circle of radius 4, sigma 0.3.
void clusters(std::uint32_t k, int per, std::uint64_t seed, Matrix& z, std::vector<std::uint32_t>& labels) {
  SeededRng rng(seed);
  z.resize(2, k * per);
  labels.clear();
  for (std::uint32_t c = 0; c < k; ++c)
    for (int i = 0; i < per; ++i) {
      const double a = 2.0 * M_PI * c / k;
      z(0, labels.size()) = 4 * std::cos(a) + 0.3 * rng.normal();
      z(1, labels.size()) = 4 * std::sin(a) + 0.3 * rng.normal();
      labels.push_back(c);
    }
}

}  // namespace

TEST_CASE("label assignment") {
  const auto perm = assign_labels(4, 4, 1);
  CHECK(std::set<std::uint32_t>(perm.labels.begin(), perm.labels.end()) == std::set<std::uint32_t>{0, 1, 2, 3});
  const auto one = assign_labels(9, 1, 1);
  for (auto l : one.labels) CHECK(l == 0);
  CHECK(one.depth() == 0);

  const auto bal = assign_labels(1000, 7, 3);
  std::vector<int> count(7, 0);
  for (auto l : bal.labels) ++count[l];
  CHECK(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()) <= 1);
  CHECK(assign_labels(1000, 7, 3).labels == bal.labels);
  CHECK(assign_labels(1000, 7, 4).labels != bal.labels);
  CHECK_THROWS_AS(assign_labels(5, 0, 1), Error);
  CHECK_THROWS_AS(assign_labels(5, 6, 1), Error);

  std::stringstream ss;
  write_labels(ss, bal);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 4000);
  CHECK(static_cast<unsigned char>(bytes[0]) == bal.labels[0]);
  std::stringstream in(bytes);
  CHECK(read_labels(in, 7).labels == bal.labels);
  std::stringstream small(bytes);
  CHECK_THROWS_AS(read_labels(small, 3), Error);
}

TEST_CASE("tree layout") {
  CHECK(tree_depth(1) == 0);
  CHECK(tree_depth(2) == 1);
  CHECK(tree_depth(3) == 2);
  CHECK(tree_depth(8) == 3);
  CHECK(tree_depth(4096) == 12);
  CHECK(tree_depth(5000) == 13);
  LabelCode code{6, {}};
  CHECK(code.depth() == 3);
  // 5 = 101b: left, right, left
  CHECK(code.path(5) == std::vector<bool>{true, false, true});
  std::set<std::vector<bool>> paths;
  for (std::uint32_t c = 0; c < 6; ++c) paths.insert(code.path(c));
  CHECK(paths.size() == 6);
  CHECK(tree_node_index(5, 0, 3) == 0);
  CHECK(tree_node_index(5, 1, 3) == 2);
  CHECK(tree_node_index(5, 2, 3) == 3 + 2);
  CHECK(tree_node_index(0, 2, 3) == 3);
}

TEST_CASE("flat classifier probabilities") {
  auto c = make(ClassifierMode::flat, 10, 2, 4);
  SeededRng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Vector z = 3.0 * sample_standard_normal(rng, 3);
    const Vector p = classify_flat(c, z);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Vector u = classify_flat(zeroed(c), Vector::Ones(3));
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(u[i] == doctest::Approx(0.1));
  CHECK_THROWS_AS(classify_flat(c, Vector::Ones(4)), Error);
}

TEST_CASE("tree leaf probabilities sum to one") {
  for (int depth = 1; depth <= 10; ++depth) {
    const auto v = static_cast<std::uint32_t>(1u << depth);
    auto c = make(ClassifierMode::tree, v, depth % 2 ? 1 : 2, 10 + static_cast<std::uint64_t>(depth));
    c.head.weight *= 3.0;
    SeededRng rng(static_cast<std::uint64_t>(depth));
    const Vector z = sample_standard_normal(rng, 3);
    long double total = 0;
    for (std::uint32_t k = 0; k < v; ++k) total += classify_tree(c, z, k);
    CHECK(static_cast<double>(total) == doctest::Approx(1.0).epsilon(1e-10));
  }
  auto d1 = zeroed(make(ClassifierMode::tree, 2, 1, 1));
  CHECK(classify_tree(d1, Vector::Ones(3), 0) == doctest::Approx(0.5));
  CHECK(classify_tree(d1, Vector::Ones(3), 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(classify_tree(d1, Vector::Ones(3), 2), Error);
  CHECK_THROWS_AS(classify_tree(make(ClassifierMode::flat, 4, 1, 1), Vector::Ones(3), 0), Error);
}

TEST_CASE("cross-entropy endpoints") {
  auto c = zeroed(make(ClassifierMode::flat, 5, 1, 2));
  const Matrix z = Matrix::Ones(3, 4);
  const std::vector<std::uint32_t> labels{0, 1, 2, 3};
  CHECK(classifier_loss(c, z, labels) == doctest::Approx(std::log(5.0)));
  auto t = zeroed(make(ClassifierMode::tree, 8, 1, 2));
  CHECK(classifier_loss(t, z, labels) == doctest::Approx(std::log(8.0)));
  // a near one-hot classifier: large bias on class 2
  c.head.bias[2] = 60.0;
  const std::vector<std::uint32_t> twos{2, 2, 2, 2};
  CHECK(classifier_loss(c, z, twos) < 1e-20);
}

TEST_CASE("cross-entropy gradients match finite differences") {
  for (ClassifierMode mode : {ClassifierMode::flat, ClassifierMode::tree}) {
    for (int layers : {1, 2}) {
      CAPTURE(classifier_mode_name(mode));
      CAPTURE(layers);
      auto c = make(mode, 8, layers, 20 + static_cast<std::uint64_t>(layers));
      SeededRng rng(3);
      Matrix z = sample_standard_normal(rng, 3, 5);
      const std::vector<std::uint32_t> labels{0, 7, 3, 5, 3};
      auto loss = [&] { return classifier_loss(c, z, labels); };
      const auto pass = classifier_forward(c, z, labels);
      Matrix dl(pass.logits.rows(), 5);
      for (Eigen::Index j = 0; j < 5; ++j) {
        const auto y = labels[static_cast<std::size_t>(j)];
        if (mode == ClassifierMode::flat) {
          dl.col(j) = softmax(pass.logits.col(j)) / 5.0;
          dl(y, j) -= 0.2;
        } else {
          for (int v = 0; v < 3; ++v)
            dl(v, j) = (sigmoid(pass.logits(v, j)) - (((y >> (2 - v)) & 1u) ? 1.0 : 0.0)) / 5.0;
        }
      }
      const auto g = classifier_backward(c, pass, dl, BackwardMode::params_and_input);
      auto params = param_blocks(c);
      const auto grads = g.blocks();
      REQUIRE(params.size() == grads.size());
      for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i)
          CHECK(oracle::rel_error(grads[b][i], oracle::central_diff(loss, params[b][i])) < 1e-6);
      for (Eigen::Index i = 0; i < z.size(); ++i)
        CHECK(oracle::rel_error(g.input.data()[i], oracle::central_diff(loss, z.data()[i])) < 1e-6);
    }
  }
}

TEST_CASE("entropy MI estimate") {
  Matrix uniform = Matrix::Zero(6, 3);
  CHECK(mi_from_logits(uniform).value == 0.0);
  Matrix onehot = Matrix::Constant(6, 3, -1e4);
  for (int j = 0; j < 3; ++j) onehot(j, j) = 0.0;
  CHECK(mi_from_logits(onehot).value == std::log(6.0));
  Matrix two(2, 4);
  for (int j = 0; j < 4; ++j) two.col(j) << std::log(0.9), std::log(0.1);
  CHECK(mi_from_logits(two).value == doctest::Approx(0.368064).epsilon(1e-6));
  CHECK(mi_from_logits(two).value == doctest::Approx(std::log(2.0) - 0.325083).epsilon(1e-6));

  auto tree = make(ClassifierMode::tree, 4, 1, 1);
  try {
    estimate_mi(tree, Matrix::Ones(3, 2));
    FAIL("expected unsupported_mode");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::unsupported_mode);
  }
  auto v1 = make(ClassifierMode::flat, 1, 2, 1);
  SeededRng rng(1);
  CHECK(estimate_mi(v1, sample_standard_normal(rng, 3, 5)).value == 0.0);
}

TEST_CASE("Fano estimate") {
  Vector sure = Vector::Zero(4);
  CHECK(fano_from_log_true(sure, 10).mi == doctest::Approx(std::log(10.0)));
  CHECK(fano_from_log_true(sure, 10).pe == 0.0);
  Vector half = Vector::Constant(4, std::log(0.5));
  CHECK(std::abs(fano_from_log_true(half, 2).mi) < 1e-15);
  CHECK(fano_from_log_true(half, 2).pe == doctest::Approx(0.5));
}

TEST_CASE("Fano bound against exhaustive entropy") {
  // Flat classifier: the true label's probability gives Fano, the full
  // distribution gives the entropy estimate.
  SeededRng rng(77);
  for (int state = 0; state < 60; ++state) {
    const std::uint32_t v = 2 + static_cast<std::uint32_t>(rng.below(14));
    const Eigen::Index b = 20;
    Matrix logits = (0.5 + 4.0 * rng.uniform()) * sample_standard_normal(rng, v, b);
    std::vector<std::uint32_t> labels(b);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(v));
    // make the true label likely in some states so P_e spans (0, 1)
    for (Eigen::Index j = 0; j < b; ++j) logits(labels[static_cast<std::size_t>(j)], j) += 6.0 * rng.uniform();
    long double h = 0, pe = 0, hb = 0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto p = oracle::softmax(logits.col(j));
      h += oracle::entropy(p);
      const long double e = 1.0L - p[labels[static_cast<std::size_t>(j)]];
      pe += e;
      hb += oracle::entropy({e, 1.0L - e});
    }
    const long double log_v = std::log(static_cast<long double>(v));
    const long double mi = log_v - h / b, mi_fano = log_v - hb / b, mean_pe = pe / b;
    Vector log_true(b);
    for (Eigen::Index j = 0; j < b; ++j)
      log_true[j] = logits(labels[static_cast<std::size_t>(j)], j) - log_sum_exp(logits.col(j));
    const FanoEstimate f = fano_from_log_true(log_true, v);
    CHECK(f.mi == doctest::Approx(static_cast<double>(mi_fano)).epsilon(1e-10));
    CHECK(f.pe == doctest::Approx(static_cast<double>(mean_pe)).epsilon(1e-10));
    const double lib_mi = mi_from_logits(logits).raw;
    CHECK(lib_mi == doctest::Approx(static_cast<double>(mi)).epsilon(1e-10));
    CHECK(f.mi - lib_mi >= -1e-9);
    CHECK(f.mi - lib_mi <= f.pe * static_cast<double>(log_v) + 1e-6);
  }
}

TEST_CASE("marginal KL estimate") {
  SUBCASE("single component equals the closed-form KL") {
    VaeModel m;
    m.latent_dim = 2;
    m.encoder.layers.push_back({Matrix::Zero(4, 3), Vector::Zero(4), Activation::linear});
    m.encoder.layers[0].bias << 0.7, -0.4, std::log(0.6), std::log(1.3);
    m.decoder.layers.push_back({Matrix::Zero(3, 2), Vector::Zero(3), Activation::linear});
    auto c = make(ClassifierMode::flat, 1, 1, 1, 2);
    SeededRng rng(4);
    Matrix x = Matrix::Zero(3, 1);
    const std::vector<std::uint32_t> labels{0};
    const double md = estimate_md(m, c, x, labels, 200000, rng);
    Vector mu(2), ls(2);
    mu << 0.7, -0.4;
    ls << std::log(0.6), std::log(1.3);
    CHECK(md == doctest::Approx(gaussian_kl_to_standard_log(mu, ls)).epsilon(0.01));
  }
  SUBCASE("uniform 1-D mixture with the exact posterior classifier") {
    // equal sigmas make log q(x_i|z) linear in z, so a 1-layer head is exact
    const int n = 16;
    const double sigma = 0.4;
    std::vector<long double> mus;
    SeededRng rng(9);
    auto c = make(ClassifierMode::flat, n, 1, 2, 1);
    for (int i = 0; i < n; ++i) {
      const double m = -2.0 + 4.0 * rng.uniform();
      mus.push_back(m);
      c.head.weight(i, 0) = m / (sigma * sigma);
      c.head.bias[i] = -m * m / (2 * sigma * sigma);
    }
    auto agg = [&](long double z) {
      std::vector<long double> t;
      for (auto m : mus) t.push_back(oracle::normal_logpdf(z, m, sigma));
      return oracle::lse(t) - std::log(static_cast<long double>(n));
    };
    const long double ref = oracle::simpson(
        [&](long double z) {
          const long double la = agg(z);
          return std::exp(la) * (la - oracle::normal_logpdf(z, 0, 1));
        },
        -8, 8, 4000);
    const int samples = 100000;
    Vector lq(samples), lp(samples), lt(samples);
    Matrix z(1, samples);
    std::vector<std::uint32_t> labels(samples);
    for (int s = 0; s < samples; ++s) {
      const auto i = static_cast<std::uint32_t>(s % n);
      labels[static_cast<std::size_t>(s)] = i;
      z(0, s) = static_cast<double>(mus[i]) + sigma * rng.normal();
      lq[s] = static_cast<double>(oracle::normal_logpdf(z(0, s), mus[i], sigma));
      lp[s] = static_cast<double>(oracle::normal_logpdf(z(0, s), 0, 1));
    }
    const auto pass = classifier_forward(c, z, labels);
    lt = true_label_log_prob(c, pass, labels);
    CHECK(std::abs(md_from_terms(lq, lp, lt, n) - static_cast<double>(ref)) < 0.02);
  }
}

TEST_CASE("toy training") {
  Matrix z;
  std::vector<std::uint32_t> labels;
  clusters(2, 200, 1, z, labels);
  auto flat2 = make(ClassifierMode::flat, 2, 2, 3, 2, 16);
  fit(flat2, z, labels, 300, 0.02);
  CHECK(accuracy(flat2, z, labels) > 0.99);

  clusters(8, 100, 2, z, labels);
  auto flat8 = make(ClassifierMode::flat, 8, 2, 4, 2, 16);
  auto tree8 = make(ClassifierMode::tree, 8, 2, 4, 2, 16);
  fit(flat8, z, labels, 600, 0.02);
  fit(tree8, z, labels, 600, 0.02);
  const double af = accuracy(flat8, z, labels), at = accuracy(tree8, z, labels);
  CHECK(af > 0.9);
  CHECK(std::abs(af - at) <= 0.02);
}

TEST_CASE("classifier checkpoint round trip") {
  auto c = make(ClassifierMode::tree, 13, 2, 5);
  std::stringstream ss;
  write_classifier(ss, c);
  const auto d = read_classifier(ss);
  CHECK(d.mode == c.mode);
  CHECK(d.num_categories == 13);
  CHECK(d.depth == 4);
  CHECK(d.head.weight == c.head.weight);
  CHECK(d.trunk.layers[0].weight == c.trunk.layers[0].weight);
}

TEST_CASE("quadratic input map") {
  for (ClassifierMode mode : {ClassifierMode::flat, ClassifierMode::tree}) {
    for (int layers : {1, 2}) {
      CAPTURE(classifier_mode_name(mode));
      CAPTURE(layers);
      SeededRng rng(40 + static_cast<std::uint64_t>(layers));
      ClassifierShape s;
      s.latent_dim = 3;
      s.hidden = 6;
      s.layers = layers;
      s.num_categories = 8;
      s.mode = mode;
      s.quadratic = true;
      auto c = make_classifier(s, rng);
      CHECK(c.input_dim() == 3);
      CHECK(c.feature_dim() == 6);
      Matrix z = sample_standard_normal(rng, 3, 5);
      const std::vector<std::uint32_t> labels{0, 7, 3, 5, 3};
      ClassifierGrads g;
      const double loss = classifier_loss_and_grad(c, z, labels, g);
      CHECK(loss == doctest::Approx(classifier_loss(c, z, labels)).epsilon(1e-14));
      auto f = [&] { return classifier_loss(c, z, labels); };
      auto params = param_blocks(c);
      const auto grads = g.blocks();
      for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i)
          CHECK(oracle::rel_error(grads[b][i], oracle::central_diff(f, params[b][i])) < 1e-6);

      // input gradient through z and z*z
      const auto pass = classifier_forward(c, z, labels);
      Matrix dl = Matrix::Random(pass.logits.rows(), pass.logits.cols());
      const auto gi = classifier_backward(c, pass, dl, BackwardMode::input_only);
      auto h = [&] { return (classifier_forward(c, z, labels).logits.array() * dl.array()).sum(); };
      for (Eigen::Index i = 0; i < z.size(); ++i)
        CHECK(oracle::rel_error(gi.input.data()[i], oracle::central_diff(h, z.data()[i])) < 1e-6);
    }
  }

  // a linear head on [z; z*z] represents a Gaussian log density exactly
  ClassifierShape s;
  s.latent_dim = 2;
  s.layers = 1;
  s.num_categories = 2;
  s.quadratic = true;
  SeededRng rng(9);
  auto c = make_classifier(s, rng);
  c.head.weight << 2.0, 0.0, -0.5, -0.5, 0.0, 0.0, -0.5, -0.5;  // N((2,0), I) vs N(0, I)
  c.head.bias << -2.0, 0.0;
  const Vector z = (Vector(2) << 1.0, 0.3).finished();
  const Vector p = classify_flat(c, z);
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-(2.0 * z[0] - 2.0)))));

  std::stringstream ss;
  write_classifier(ss, c);
  const auto d = read_classifier(ss);
  CHECK(d.quadratic);
  CHECK(d.input_dim() == 2);
  CHECK(d.head.weight == c.head.weight);
}
