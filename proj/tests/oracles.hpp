// Independent reference computations used only by the tests. Nothing here
// calls into the library's numeric kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline long double lse(const std::vector<long double>& v) {
  long double m = -INFINITY;
  for (auto x : v) m = std::max(m, x);
  if (!std::isfinite(static_cast<double>(m))) return m;
  long double s = 0;
  for (auto x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline long double lse(const Eigen::VectorXd& v) {
  std::vector<long double> w(v.data(), v.data() + v.size());
  return lse(w);
}

inline long double normal_logpdf(long double z, long double mu, long double sigma) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double u = (z - mu) / sigma;
  return -0.5L * u * u - std::log(sigma) - 0.5L * std::log(2.0L * pi);
}

// Composite Simpson rule on [a, b] with n (even) intervals.
inline long double simpson(const std::function<long double(long double)>& f, long double a, long double b, int n) {
  if (n % 2) ++n;
  const long double h = (b - a) / n;
  long double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0L : 2.0L) * f(a + i * h);
  return s * h / 3.0L;
}

// 2-D tensor Simpson over [lo, hi]^2.
inline long double simpson2(const std::function<long double(long double, long double)>& f, long double lo,
                            long double hi, int n) {
  if (n % 2) ++n;
  const long double h = (hi - lo) / n;
  auto w = [n](int i) { return (i == 0 || i == n) ? 1.0L : (i % 2 ? 4.0L : 2.0L); };
  long double s = 0;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) s += w(i) * w(j) * f(lo + i * h, lo + j * h);
  return s * h * h / 9.0L;
}

/// Posterior moments of a toy 2-D model, one component per data point.
struct Mixture2 {
  std::vector<long double> mu0, mu1, s0, s1;

  std::size_t size() const { return mu0.size(); }

  long double log_component(std::size_t j, long double a, long double b) const {
    return normal_logpdf(a, mu0[j], s0[j]) + normal_logpdf(b, mu1[j], s1[j]);
  }

  long double log_aggregate(long double a, long double b) const {
    std::vector<long double> t(size());
    for (std::size_t j = 0; j < size(); ++j) t[j] = log_component(j, a, b);
    return lse(t) - std::log(static_cast<long double>(size()));
  }
};

/// I(z,x) and KL(q(z) || N(0,I)) for the uniform mixture, by quadrature.
struct Decomposition {
  long double mi = 0;
  long double marginal_kl = 0;
};

inline Decomposition decompose(const Mixture2& m, long double lo, long double hi, int n) {
  // E_q(z)[log q(z)] and E_q(z)[log p(z)], plus the mean component entropy.
  long double cross_agg = 0, cross_prior = 0;
  const long double h = (hi - lo) / n;
  auto w = [n](int i) { return (i == 0 || i == n) ? 1.0L : (i % 2 ? 4.0L : 2.0L); };
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j) {
      const long double a = lo + i * h, b = lo + j * h;
      const long double la = m.log_aggregate(a, b);
      const long double q = std::exp(la);
      const long double lp = normal_logpdf(a, 0, 1) + normal_logpdf(b, 0, 1);
      const long double ww = w(i) * w(j) * h * h / 9.0L;
      cross_agg += ww * q * la;
      cross_prior += ww * q * lp;
    }
  const long double e = 2.718281828459045235360287471352662498L;
  const long double pi = 3.141592653589793238462643383279502884L;
  long double neg_cond_entropy = 0;  // mean E_q(z|x)[log q(z|x)]
  for (std::size_t j = 0; j < m.size(); ++j)
    neg_cond_entropy -= std::log(2.0L * pi * e * m.s0[j] * m.s1[j]);
  neg_cond_entropy /= static_cast<long double>(m.size());
  Decomposition d;
  d.mi = neg_cond_entropy - cross_agg;
  d.marginal_kl = cross_agg - cross_prior;
  return d;
}

// Shannon entropy (nats) of a probability vector.
inline long double entropy(const std::vector<long double>& p) {
  long double h = 0;
  for (auto x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

inline std::vector<long double> softmax(const Eigen::VectorXd& logits) {
  const long double l = lse(logits);
  std::vector<long double> p(static_cast<std::size_t>(logits.size()));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(static_cast<long double>(logits[static_cast<Eigen::Index>(i)]) - l);
  return p;
}

// Central-difference derivative of f with respect to x[i] (modified in place).
inline double central_diff(const std::function<double()>& f, double& x, double step = 1e-5) {
  const double keep = x;
  x = keep + step;
  const double up = f();
  x = keep - step;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * step);
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace oracle
