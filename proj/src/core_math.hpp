#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "errors.hpp"

namespace vaeas {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

inline constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const VectorRef& v);
Vector softmax(const VectorRef& v);
Vector log_softmax(const VectorRef& v);

// Column-wise log-sum-exp of a (classes x batch) matrix.
Vector log_sum_exp_cols(const MatrixRef& m);

double sigmoid(double x);
// log(sigmoid(x)) without cancellation for large |x|.
double log_sigmoid(double x);
double softplus(double x);

// Closed-form KL( N(mu, diag sigma^2) || N(0, I) ).
double gaussian_kl_to_standard(const VectorRef& mu, const VectorRef& sigma);
double gaussian_kl_to_standard_log(const VectorRef& mu, const VectorRef& log_sigma);

double log_normal_diag(const VectorRef& z, const VectorRef& mu, const VectorRef& log_sigma);
double log_standard_normal(const VectorRef& z);

// -p ln p - (1-p) ln(1-p), with 0 ln 0 = 0.
double binary_entropy(double p);

/// Counter-based generator (Philox4x32-10).
///
/// The 128-bit counter is split into a 64-bit block index and a 64-bit stream
/// id, and the 64-bit key is the user seed. Distinct stream ids therefore never
/// share a counter value, so substreams cannot overlap.
class SeededRng {
 public:
  enum class Purpose : std::uint8_t {
    general = 0,
    init = 1,
    shuffle = 2,
    labels = 3,
    noise = 4,
    data = 5,
    eval = 6,
    mine = 7,
    mc = 8,
  };

  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  // Substream for a (epoch, batch, purpose) triple; epoch uses 24 bits and
  // batch 32 bits of the stream id.
  static SeededRng substream(std::uint64_t seed, std::uint32_t epoch, std::uint32_t batch,
                             Purpose purpose);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::uint64_t buffer_[2] = {0, 0};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

Vector sample_standard_normal(SeededRng& rng, Eigen::Index n);
Matrix sample_standard_normal(SeededRng& rng, Eigen::Index rows, Eigen::Index cols);

// Raw Philox block, exposed for known-answer tests.
void philox4x32_10(const std::uint32_t counter[4], const std::uint32_t key[2], std::uint32_t out[4]);

}  // namespace vaeas
