#include "core_math.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace vaeas {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::domain: return "domain";
    case ErrorCode::config: return "config";
    case ErrorCode::unsupported_mode: return "unsupported_mode";
    case ErrorCode::tape_mismatch: return "tape_mismatch";
    case ErrorCode::io: return "io";
    case ErrorCode::data_header: return "data_header";
    case ErrorCode::data_magic: return "data_magic";
    case ErrorCode::data_truncated: return "data_truncated";
    case ErrorCode::data_dims: return "data_dims";
    case ErrorCode::checkpoint: return "checkpoint";
    case ErrorCode::numerical: return "numerical";
  }
  return "unknown";
}

double log_sum_exp(const VectorRef& v) {
  require(v.size() > 0, ErrorCode::dimension, "log_sum_exp: empty input");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector log_softmax(const VectorRef& v) {
  require(v.size() > 0, ErrorCode::dimension, "log_softmax: empty input");
  return v.array() - log_sum_exp(v);
}

Vector softmax(const VectorRef& v) {
  require(v.size() > 0, ErrorCode::dimension, "softmax: empty input");
  Vector p = (v.array() - v.maxCoeff()).exp();
  return p / p.sum();
}

Vector log_sum_exp_cols(const MatrixRef& m) {
  require(m.rows() > 0, ErrorCode::dimension, "log_sum_exp_cols: no rows");
  Vector out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[j] = log_sum_exp(m.col(j));
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_sigmoid(double x) { return -softplus(-x); }

double gaussian_kl_to_standard(const VectorRef& mu, const VectorRef& sigma) {
  require(mu.size() == sigma.size(), ErrorCode::dimension,
          "gaussian_kl_to_standard: mu/sigma length mismatch");
  require((sigma.array() > 0.0).all(), ErrorCode::domain,
          "gaussian_kl_to_standard: sigma must be strictly positive");
  return 0.5 * (mu.array().square() + sigma.array().square() - 1.0 - 2.0 * sigma.array().log()).sum();
}

double gaussian_kl_to_standard_log(const VectorRef& mu, const VectorRef& log_sigma) {
  require(mu.size() == log_sigma.size(), ErrorCode::dimension,
          "gaussian_kl_to_standard: mu/log_sigma length mismatch");
  return 0.5 * (mu.array().square() + (2.0 * log_sigma.array()).exp() - 1.0 - 2.0 * log_sigma.array()).sum();
}

double log_normal_diag(const VectorRef& z, const VectorRef& mu, const VectorRef& log_sigma) {
  require(z.size() == mu.size() && z.size() == log_sigma.size(), ErrorCode::dimension,
          "log_normal_diag: length mismatch");
  const auto u = (z - mu).array() * (-log_sigma.array()).exp();
  return -0.5 * u.square().sum() - log_sigma.sum() - 0.5 * kLog2Pi * static_cast<double>(z.size());
}

double log_standard_normal(const VectorRef& z) {
  return -0.5 * z.squaredNorm() - 0.5 * kLog2Pi * static_cast<double>(z.size());
}

double binary_entropy(double p) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::domain,
          "binary_entropy: p outside [0,1]: " + std::to_string(p));
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

void philox4x32_10(const std::uint32_t counter[4], const std::uint32_t key[2], std::uint32_t out[4]) {
  std::uint32_t c0 = counter[0], c1 = counter[1], c2 = counter[2], c3 = counter[3];
  std::uint32_t k0 = key[0], k1 = key[1];
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c0, hi0, lo0);
    mulhilo(kPhiloxM1, c2, hi1, lo1);
    const std::uint32_t n0 = hi1 ^ c1 ^ k0;
    const std::uint32_t n2 = hi0 ^ c3 ^ k1;
    c0 = n0;
    c1 = lo1;
    c2 = n2;
    c3 = lo0;
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  out[0] = c0;
  out[1] = c1;
  out[2] = c2;
  out[3] = c3;
}

SeededRng SeededRng::substream(std::uint64_t seed, std::uint32_t epoch, std::uint32_t batch,
                               Purpose purpose) {
  const std::uint64_t stream = (static_cast<std::uint64_t>(purpose) << 56) |
                               ((static_cast<std::uint64_t>(epoch) & 0xFFFFFFu) << 32) |
                               static_cast<std::uint64_t>(batch);
  return SeededRng(seed, stream);
}

void SeededRng::refill() {
  const std::uint32_t counter[4] = {
      static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  const std::uint32_t key[2] = {static_cast<std::uint32_t>(seed_),
                                static_cast<std::uint32_t>(seed_ >> 32)};
  std::uint32_t out[4];
  philox4x32_10(counter, key, out);
  ++block_;
  buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
  buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
  buffered_ = 2;
}

std::uint64_t SeededRng::next_u64() {
  if (buffered_ == 0) refill();
  return buffer_[2 - buffered_--];
}

double SeededRng::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
  require(n > 0, ErrorCode::domain, "SeededRng::below: n must be positive");
  // rejection keeps the result unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

Vector sample_standard_normal(SeededRng& rng, Eigen::Index n) {
  require(n >= 1, ErrorCode::domain, "sample_standard_normal: n must be >= 1");
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Matrix sample_standard_normal(SeededRng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = rng.normal();
  return m;
}

}  // namespace vaeas
