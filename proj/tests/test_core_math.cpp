#include <doctest.h>

#include <cmath>
#include <set>

#include "core_math.hpp"
#include "oracles.hpp"

using namespace vaeas;

TEST_CASE("philox known answers") {
  struct Kat {
    std::uint32_t ctr[4];
    std::uint32_t key[2];
    std::uint32_t out[4];
  };
  const Kat kats[] = {
      {{0, 0, 0, 0}, {0, 0}, {0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}},
      {{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
       {0xffffffff, 0xffffffff},
       {0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}},
      {{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
       {0xa4093822, 0x299f31d0},
       {0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}},
  };
  for (const auto& k : kats) {
    std::uint32_t out[4];
    philox4x32_10(k.ctr, k.key, out);
    for (int i = 0; i < 4; ++i) CHECK(out[i] == k.out[i]);
  }
}

TEST_CASE("rng streams are reproducible and distinct") {
  SeededRng a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  std::vector<std::uint64_t> va, vc, vd;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    va.push_back(x);
    vc.push_back(c.next_u64());
    vd.push_back(d.next_u64());
  }
  CHECK(va != vc);
  CHECK(va != vd);

  auto s1 = SeededRng::substream(7, 1, 2, SeededRng::Purpose::noise);
  auto s2 = SeededRng::substream(7, 2, 1, SeededRng::Purpose::noise);
  auto s3 = SeededRng::substream(7, 1, 2, SeededRng::Purpose::shuffle);
  CHECK(s1.stream() != s2.stream());
  CHECK(s1.stream() != s3.stream());
  CHECK(s1.next_u64() != s3.next_u64());
}

TEST_CASE("rng distributions") {
  SeededRng rng(1234);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  double umin = 1, umax = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(umin > 0.0);
  CHECK(umax < 1.0);
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 5.0 / std::sqrt(n));
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));

  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = rng.below(7);
    REQUIRE(k < 7);
    ++counts[k];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("log_sum_exp matches extended precision") {
  SeededRng rng(5);
  for (int t = 0; t < 50; ++t) {
    Vector v(17);
    const double scale = std::pow(10.0, t % 4);
    for (auto& x : v) x = scale * rng.normal();
    CHECK(log_sum_exp(v) == doctest::Approx(static_cast<double>(oracle::lse(v))).epsilon(1e-13));
  }
  Vector big(3);
  big << 1000.0, 1000.0, -1000.0;
  CHECK(log_sum_exp(big) == doctest::Approx(1000.0 + std::log(2.0)));
  Vector neg(2);
  neg << -1e308, -INFINITY;
  CHECK(std::isfinite(log_sum_exp(neg)));
  Vector empty(0);
  CHECK_THROWS_AS(log_sum_exp(empty), Error);
}

TEST_CASE("softmax and log_softmax") {
  SeededRng rng(9);
  Vector v = 30.0 * sample_standard_normal(rng, 11);
  const Vector p = softmax(v);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((p.array() >= 0).all());
  const Vector lp = log_softmax(v);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto ref = oracle::softmax(v)[static_cast<std::size_t>(i)];
    if (ref > 1e-300) CHECK(lp[i] == doctest::Approx(static_cast<double>(std::log(ref))).epsilon(1e-12));
  }
  Matrix m(3, 2);
  m << 1, -5, 2, 0, 3, 5;
  const Vector cols = log_sum_exp_cols(m);
  CHECK(cols[0] == doctest::Approx(log_sum_exp(m.col(0))));
  CHECK(cols[1] == doctest::Approx(log_sum_exp(m.col(1))));
}

TEST_CASE("sigmoid family at extremes") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(log_sigmoid(800.0) == doctest::Approx(0.0));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
  for (double x : {-30.0, -3.0, -0.1, 0.0, 0.7, 12.0})
    CHECK(log_sigmoid(x) == doctest::Approx(static_cast<double>(-std::log1p(std::exp(-static_cast<long double>(x))))));
}

TEST_CASE("gaussian KL closed form against quadrature") {
  for (auto [mu, sigma] : {std::pair{0.0, 1.0}, {1.5, 0.3}, {-2.0, 2.5}, {0.2, 0.05}}) {
    const long double m = mu, s = sigma;
    auto integrand = [&](long double z) {
      const long double lq = oracle::normal_logpdf(z, m, s);
      return std::exp(lq) * (lq - oracle::normal_logpdf(z, 0, 1));
    };
    const long double ref = oracle::simpson(integrand, m - 14 * s, m + 14 * s, 4000);
    Vector vm(1), vs(1);
    vm << mu;
    vs << sigma;
    CHECK(gaussian_kl_to_standard(vm, vs) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-9));
    CHECK(gaussian_kl_to_standard_log(vm, vs.array().log().matrix()) ==
          doctest::Approx(gaussian_kl_to_standard(vm, vs)));
  }
  Vector zero = Vector::Zero(4), one = Vector::Ones(4);
  CHECK(gaussian_kl_to_standard(zero, one) == 0.0);
  Vector bad = one;
  bad[2] = 0.0;
  CHECK_THROWS_AS(gaussian_kl_to_standard(zero, bad), Error);
  try {
    gaussian_kl_to_standard(zero, bad);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::domain);
  }
}

TEST_CASE("log densities") {
  Vector z(2), mu(2), ls(2);
  z << 0.3, -1.2;
  mu << 0.1, -1.0;
  ls << std::log(0.5), std::log(2.0);
  const double ref = static_cast<double>(oracle::normal_logpdf(0.3, 0.1, 0.5) + oracle::normal_logpdf(-1.2, -1.0, 2.0));
  CHECK(log_normal_diag(z, mu, ls) == doctest::Approx(ref).epsilon(1e-13));
  CHECK(log_standard_normal(z) ==
        doctest::Approx(static_cast<double>(oracle::normal_logpdf(0.3, 0, 1) + oracle::normal_logpdf(-1.2, 0, 1))));
}

TEST_CASE("binary entropy") {
  CHECK(binary_entropy(0.0) == 0.0);
  CHECK(binary_entropy(1.0) == 0.0);
  CHECK(binary_entropy(0.5) == doctest::Approx(std::log(2.0)));
  CHECK(binary_entropy(0.2) == doctest::Approx(binary_entropy(0.8)));
  CHECK_THROWS_AS(binary_entropy(-0.1), Error);
  CHECK_THROWS_AS(binary_entropy(1.1), Error);
}
