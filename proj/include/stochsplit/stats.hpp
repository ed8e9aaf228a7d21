#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stochsplit {

/// Mean of a Monte-Carlo sample with its standard error.
struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct WeightedSample {
  double value = 0.0;
  double weight = 0.0;
};

/// Fixed-order pairwise (cascade) summation. The result depends only on the
/// order of the input, never on how work was scheduled.
double pairwise_sum(std::span<const double> values) noexcept;

/// Sample mean and standard error (sample stddev / sqrt(n)). n >= 1; the
/// error is 0 for a single sample.
McEstimate mean_and_stderr(std::span<const double> values);

/// Unbiased sample variance with the standard error of that estimator,
/// sqrt((m4 - s^4) / n) from the empirical fourth central moment.
McEstimate variance_and_stderr(std::span<const double> values);

/// k-th weighted raw moment sum(w v^k) / sum(w). Throws on zero total weight
/// or negative weights.
double weighted_moment(std::span<const WeightedSample> samples, int k);

/// Weighted mean and (population) variance.
struct WeightedMoments {
  double mean = 0.0;
  double variance = 0.0;
};
WeightedMoments weighted_mean_variance(std::span<const WeightedSample> samples);

/// Kish effective sample size (sum w)^2 / sum w^2.
double effective_sample_size(std::span<const WeightedSample> samples);

/// Degeneracy ratio sum(w) / max(w).
double weight_ratio_ess(std::span<const WeightedSample> samples);

/// sup |F_A - G_B| between the right-continuous empirical CDF of `a` and the
/// weighted empirical CDF of `b`. Ties are pooled before taking the sup.
double ks_distance(std::span<const double> a, std::span<const WeightedSample> b);

/// Unweighted two-sample convenience overload.
double ks_distance(std::span<const double> a, std::span<const double> b);

/// Asymptotic two-sample KS critical value c(alpha) sqrt((n + m) / (n m)),
/// c(alpha) = sqrt(-ln(alpha / 2) / 2).
double ks_critical_value(double alpha, double n, double m);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_stddev(std::span<const double> values);

}  // namespace stochsplit
