#include "freqlens/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace freqlens {

MetricSet compute_metrics(std::span<const double> pred, std::span<const double> target, std::size_t n_samples) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("compute_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                                std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw std::invalid_argument("compute_metrics: empty input");
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    se += e * e;
    ae += std::abs(e);
  }
  MetricSet m;
  m.mse = se / static_cast<double>(pred.size());
  m.mae = ae / static_cast<double>(pred.size());
  m.rmse = std::sqrt(m.mse);
  m.n_samples = n_samples;
  return m;
}

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < kEps) return h;
  }
  throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (x < 0 || x > 1) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  if (x == 0 || x == 1) return x;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1) / (a + b + 2)) return front * beta_cf(a, b, x) / a;
  return 1 - front * beta_cf(b, a, 1 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0)) throw std::invalid_argument("student_t_two_sided: dof must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2, 0.5, dof / (dof + t * t));
}

SignificanceResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least two pairs");
  SignificanceResult r;
  r.n = a.size();
  const double n = static_cast<double>(r.n);
  double mean = 0;
  for (std::size_t i = 0; i < r.n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0;
  for (std::size_t i = 0; i < r.n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / (n - 1));
  r.mean_diff = mean;
  if (sd == 0) {
    r.degenerate_variance = true;
    if (mean == 0) {
      r.t = 0;
      r.p = 1;
      r.cohens_d = 0;
    } else {
      const double inf = std::numeric_limits<double>::infinity();
      r.t = mean > 0 ? inf : -inf;
      r.p = 0;
      r.cohens_d = r.t;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  r.p = std::min(1.0, std::max(0.0, student_t_two_sided(r.t, n - 1)));
  r.cohens_d = mean / sd;
  return r;
}

}  // namespace freqlens
