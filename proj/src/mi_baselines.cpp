#include "mi_baselines.hpp"

#include <cmath>
#include <numeric>

namespace vaeas {

Vector log_aggregate_density(const MatrixRef& z, const GaussianBatch& comp) {
  require(z.rows() == comp.mu.rows(), ErrorCode::dimension, "log_aggregate_density: latent dim mismatch");
  const Eigen::Index s = comp.size();
  require(s >= 1, ErrorCode::config, "log_aggregate_density: no components");
  // log q(z|x_j) = -1/2 sum_d (z_d - m_jd)^2 w_jd - sum_d log s_jd - D/2 log 2pi,  w = 1/s^2
  const Matrix w = (-2.0 * comp.log_sigma.array()).exp();                   // D x S
  const Matrix mw = (comp.mu.array() * w.array()).matrix();                 // D x S
  Vector c(s);
  for (Eigen::Index j = 0; j < s; ++j)
    c[j] = -0.5 * (comp.mu.col(j).array().square() * w.col(j).array()).sum() - comp.log_sigma.col(j).sum() -
           0.5 * kLog2Pi * static_cast<double>(z.rows());
  const Matrix z2 = z.array().square();
  Matrix logq = -0.5 * (w.transpose() * z2) + mw.transpose() * z;           // S x B
  logq.colwise() += c;
  return log_sum_exp_cols(logq).array() - std::log(static_cast<double>(s));
}

McEstimate mc_estimate(const GaussianBatch& post, const McEstimatorConfig& config, SeededRng& rng) {
  const auto n = static_cast<std::size_t>(post.size());
  const std::size_t s = config.subset == 0 ? n : config.subset;
  require(s >= 1 && s <= n, ErrorCode::config, "mc_estimate: need 1 <= S <= N");
  require(config.draws_per_point >= 1, ErrorCode::config, "mc_estimate: need at least one draw per point");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  if (s < n)
    for (std::size_t i = 0; i < s; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  const Eigen::Index d = post.mu.rows();
  GaussianBatch sub{Matrix(d, static_cast<Eigen::Index>(s)), Matrix(d, static_cast<Eigen::Index>(s))};
  for (std::size_t i = 0; i < s; ++i) {
    sub.mu.col(static_cast<Eigen::Index>(i)) = post.mu.col(order[i]);
    sub.log_sigma.col(static_cast<Eigen::Index>(i)) = post.log_sigma.col(order[i]);
  }

  double mi = 0, mi2 = 0, md = 0, md2 = 0;
  std::size_t count = 0;
  constexpr Eigen::Index kChunk = 512;
  for (int r = 0; r < config.draws_per_point; ++r) {
    for (Eigen::Index start = 0; start < sub.size(); start += kChunk) {
      const Eigen::Index b = std::min(kChunk, sub.size() - start);
      const GaussianBatch g{sub.mu.middleCols(start, b), sub.log_sigma.middleCols(start, b)};
      const Matrix z = reparameterize(g, sample_standard_normal(rng, d, b));
      const Vector log_q = log_posterior_cols(z, g);
      // a single component is its own mixture; keep the ratio exactly zero
      const Vector log_agg = s == 1 ? log_q : log_aggregate_density(z, sub);
      const Vector log_p = log_prior_cols(z);
      for (Eigen::Index j = 0; j < b; ++j) {
        const double a = log_q[j] - log_agg[j];
        const double m = log_agg[j] - log_p[j];
        mi += a;
        mi2 += a * a;
        md += m;
        md2 += m * m;
      }
      count += static_cast<std::size_t>(b);
    }
  }
  const double c = static_cast<double>(count);
  McEstimate out;
  out.subset = s;
  out.mi = mi / c;
  out.md = md / c;
  out.mi_stderr = std::sqrt(std::max(0.0, mi2 / c - out.mi * out.mi) / c);
  out.md_stderr = std::sqrt(std::max(0.0, md2 / c - out.md * out.md) / c);
  out.mean_kl = kl_to_standard_cols(sub).mean();
  return out;
}

McEstimate mc_estimate(const VaeModel& model, const MatrixRef& x, const McEstimatorConfig& config,
                       SeededRng& rng) {
  return mc_estimate(encode_batch(model, x), config, rng);
}

double dv_objective(const VectorRef& t_joint, const VectorRef& t_marginal) {
  require(t_joint.size() > 0 && t_marginal.size() > 0, ErrorCode::dimension, "dv_objective: empty batch");
  return t_joint.mean() - (log_sum_exp(t_marginal) - std::log(static_cast<double>(t_marginal.size())));
}

Matrix shuffled_pairs(const MatrixRef& x, const MatrixRef& z, SeededRng& rng) {
  require(x.cols() == z.cols(), ErrorCode::dimension, "shuffled_pairs: batch size mismatch");
  const Eigen::Index b = x.cols();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(b));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (Eigen::Index i = b; i > 1; --i) std::swap(perm[static_cast<std::size_t>(i - 1)], perm[rng.below(static_cast<std::uint64_t>(i))]);
  Matrix out(x.rows() + z.rows(), b);
  out.topRows(x.rows()) = x;
  for (Eigen::Index j = 0; j < b; ++j) out.col(j).tail(z.rows()) = z.col(perm[static_cast<std::size_t>(j)]);
  return out;
}

double dv_objective_and_grad(const MineNet& mine, const MatrixRef& joint, const MatrixRef& marginal,
                             MlpGrads* grads) {
  auto fj = mlp_forward(mine.net, joint);
  auto fm = mlp_forward(mine.net, marginal);
  const Vector tj = fj.output.row(0).transpose();
  const Vector tm = fm.output.row(0).transpose();
  const double value = dv_objective(tj, tm);
  if (grads) {
    const Matrix dj = Matrix::Constant(1, tj.size(), 1.0 / static_cast<double>(tj.size()));
    const Vector w = softmax(tm);
    const Matrix dm = -w.transpose();
    *grads = mlp_backward(mine.net, fj.tape, dj, BackwardMode::params_only);
    *grads += mlp_backward(mine.net, fm.tape, dm, BackwardMode::params_only);
  }
  return value;
}

namespace {

Matrix stack(const MatrixRef& x, const MatrixRef& z) {
  Matrix out(x.rows() + z.rows(), x.cols());
  out.topRows(x.rows()) = x;
  out.bottomRows(z.rows()) = z;
  return out;
}

}  // namespace

MineNet mine_train(const PairSampler& sampler, Eigen::Index x_dim, Eigen::Index z_dim,
                   const MineConfig& config, SeededRng& rng) {
  require(config.steps >= 1 && config.batch_size >= 2, ErrorCode::config, "mine_train: bad steps/batch size");
  MineNet mine;
  mine.x_dim = x_dim;
  mine.z_dim = z_dim;
  mine.config = config;
  std::vector<Eigen::Index> dims{x_dim + z_dim};
  for (int k = 0; k < config.hidden_layers; ++k) dims.push_back(config.hidden);
  dims.push_back(1);
  SeededRng init(rng.seed(), rng.stream() ^ 0x5EEDu);
  mine.net = make_mlp(dims, config.act, Activation::linear, init);

  AdamOptimizer adam(config.adam);
  mine.objective_trace.reserve(static_cast<std::size_t>(config.steps));
  for (int step = 0; step < config.steps; ++step) {
    auto [x, z] = sampler(rng, config.batch_size);
    const Matrix joint = stack(x, z);
    const Matrix marginal = shuffled_pairs(x, z, rng);
    MlpGrads g;
    const double value = dv_objective_and_grad(mine, joint, marginal, &g);
    if (!std::isfinite(value))
      fail(ErrorCode::numerical, "MINE objective diverged at step " + std::to_string(step));
    mine.objective_trace.push_back(value);
    g *= -1.0;  // ascent
    adam.step(param_blocks(mine.net), grad_blocks(g));
  }
  return mine;
}

MineEstimate mine_estimate(const MineNet& mine, const PairSampler& sampler, int batches,
                           Eigen::Index batch_size, SeededRng& rng) {
  require(batches >= 1, ErrorCode::config, "mine_estimate: need at least one batch");
  MineEstimate out;
  for (int k = 0; k < batches; ++k) {
    auto [x, z] = sampler(rng, batch_size);
    const Matrix joint = stack(x, z);
    const Matrix marginal = shuffled_pairs(x, z, rng);
    out.per_batch.push_back(dv_objective_and_grad(mine, joint, marginal, nullptr));
  }
  const double n = static_cast<double>(batches);
  out.value = std::accumulate(out.per_batch.begin(), out.per_batch.end(), 0.0) / n;
  double var = 0.0;
  for (double v : out.per_batch) var += (v - out.value) * (v - out.value);
  out.std_error = batches > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  return out;
}

PairSampler vae_pair_sampler(const VaeModel& model, const Matrix& x) {
  const GaussianBatch post = encode_batch(model, x);
  return [post, x](SeededRng& rng, Eigen::Index b) {
    Matrix xs(x.rows(), b), zs(post.mu.rows(), b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(x.cols())));
      xs.col(j) = x.col(i);
      for (Eigen::Index d = 0; d < zs.rows(); ++d)
        zs(d, j) = post.mu(d, i) + std::exp(post.log_sigma(d, i)) * rng.normal();
    }
    return std::make_pair(std::move(xs), std::move(zs));
  };
}

}  // namespace vaeas
