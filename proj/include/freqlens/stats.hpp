#pragma once

#include <cstddef>
#include <span>

namespace freqlens {

struct MetricSet {
  double mse = 0, mae = 0, rmse = 0;
  std::size_t n_samples = 0;
};

/// Means over all elements; throws std::invalid_argument on length mismatch.
MetricSet compute_metrics(std::span<const double> pred, std::span<const double> target, std::size_t n_samples = 0);

struct SignificanceResult {
  std::size_t n = 0;
  double mean_diff = 0;
  double t = 0;
  double p = 1;
  /// Paired effect size mean(d) / sd(d); +-infinity when the variance is degenerate.
  double cohens_d = 0;
  bool degenerate_variance = false;
};

/// Two-sided paired t-test on a - b with n - 1 degrees of freedom.
SignificanceResult paired_ttest(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

/// P(|T| >= |t|) for Student t with `dof` degrees of freedom.
double student_t_two_sided(double t, double dof);

}  // namespace freqlens
