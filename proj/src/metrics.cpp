#include "metrics.hpp"

#include <cmath>
#include <cstdio>

namespace vaeas {

NllResult importance_nll(const VaeModel& model, const MatrixRef& x, int samples, SeededRng& rng) {
  require(samples >= 1, ErrorCode::config, "importance_nll: K must be >= 1");
  require(x.cols() >= 1, ErrorCode::config, "importance_nll: empty dataset");
  const GaussianBatch post = encode_batch(model, x);
  const Eigen::Index d = model.latent_dim;
  const double log_k = std::log(static_cast<double>(samples));
  NllResult out;
  out.per_example.reserve(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    GaussianBatch g{post.mu.col(i).replicate(1, samples), post.log_sigma.col(i).replicate(1, samples)};
    const Matrix z = reparameterize(g, sample_standard_normal(rng, d, samples));
    const Matrix logits = mlp_apply(model.decoder, z);
    Vector log_w(samples);
    const Vector log_q = log_posterior_cols(z, g);
    const Vector log_p = log_prior_cols(z);
    for (int k = 0; k < samples; ++k)
      log_w[k] = bernoulli_log_likelihood(logits.col(k), x.col(i)) + log_p[k] - log_q[k];
    out.per_example.push_back(-(log_sum_exp(log_w) - log_k));
  }
  const double n = static_cast<double>(out.per_example.size());
  double sum = 0.0, sq = 0.0;
  for (double v : out.per_example) {
    sum += v;
    sq += v * v;
  }
  out.mean = sum / n;
  out.std_error = n > 1 ? std::sqrt(std::max(0.0, (sq - n * out.mean * out.mean) / (n - 1.0)) / n) : 0.0;
  return out;
}

ActiveUnitsReport active_units(const MatrixRef& means, double threshold) {
  require(means.cols() >= 1, ErrorCode::config, "active_units: empty dataset");
  ActiveUnitsReport r;
  r.threshold = threshold;
  const Vector centre = means.rowwise().mean();
  r.covariance = (means.colwise() - centre).array().square().rowwise().mean();
  r.count = static_cast<int>((r.covariance.array() >= threshold).count());
  return r;
}

ActiveUnitsReport active_units(const VaeModel& model, const MatrixRef& x, double threshold) {
  return active_units(encode_batch(model, x).mu, threshold);
}

EvalReport assemble_report(const VaeModel& model, const Classifier* cls, std::span<const std::uint32_t> labels,
                           const MatrixRef& train, const MatrixRef& test, const ReportOptions& options,
                           SeededRng& rng) {
  EvalReport r;
  r.eval_samples = options.nll_samples;
  if (test.cols() > 0) {
    r.nll_test = importance_nll(model, test, options.nll_samples, rng).mean;
    r.kl_test = kl_to_standard_cols(encode_batch(model, test)).mean();
  } else {
    r.nll_test = r.kl_test = std::nan("");
  }
  r.au = active_units(model, test.cols() > 0 ? test : train, options.au_threshold).count;
  const ElboBatch elbo = elbo_batch(model, train, 1, rng);
  r.nll_train_recon = -elbo.mean_recon_ll;
  r.kl_train = elbo.mean_kl;
  const Eigen::Index n_nll = options.train_nll_limit > 0
                                 ? std::min<Eigen::Index>(static_cast<Eigen::Index>(options.train_nll_limit), train.cols())
                                 : train.cols();
  r.nll_train = importance_nll(model, train.leftCols(n_nll), options.nll_samples, rng).mean;
  if (cls) {
    const AuxEstimates aux = aux_estimates(model, *cls, train, labels, options.aux_draws, rng);
    r.mi = aux.mi;
    r.mi_fano = aux.mi_fano;
    r.md = aux.md;
    r.sc = aux.sc;
    r.pe = aux.pe;
  } else {
    r.mi = r.mi_fano = r.md = r.sc = r.pe = std::nan("");
  }
  return r;
}

std::optional<double> finite_or_empty(double v) {
  if (std::isfinite(v)) return v;
  return std::nullopt;
}

namespace {

std::string num(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string compact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  std::string s = std::to_string(row.epoch) + "," + row.split + "," + row.estimator + ",";
  s += num(row.nll) + "," + num(row.kl) + "," + num(row.mi) + "," + num(row.md) + "," + num(row.sc) + ",";
  s += (row.au ? std::to_string(*row.au) : std::string()) + "," + num(row.pe) + ",";
  s += compact(row.alpha) + "," + compact(row.beta) + "," + std::to_string(row.labels) + "," + std::to_string(row.seed);
  return s;
}

}  // namespace vaeas
