#include "stochsplit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stochsplit {

namespace {

constexpr std::size_t kPairwiseBlock = 8;

double cascade(const double* v, std::size_t n) noexcept {
  if (n <= kPairwiseBlock) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return cascade(v, half) + cascade(v + half, n - half);
}

double total_weight(std::span<const WeightedSample> samples) {
  std::vector<double> w(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!(samples[i].weight >= 0.0)) throw std::invalid_argument("weights must be nonnegative");
    w[i] = samples[i].weight;
  }
  const double total = pairwise_sum(w);
  if (!(total > 0.0)) throw std::invalid_argument("total weight must be positive");
  return total;
}

}  // namespace

double pairwise_sum(std::span<const double> values) noexcept {
  return cascade(values.data(), values.size());
}

McEstimate mean_and_stderr(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_and_stderr: empty sample");
  const double n = static_cast<double>(values.size());
  const double mean = pairwise_sum(values) / n;
  if (values.size() == 1) return {mean, 0.0};
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - mean) * (values[i] - mean);
  const double var = pairwise_sum(sq) / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

McEstimate variance_and_stderr(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("variance_and_stderr: need two samples");
  const double n = static_cast<double>(values.size());
  const double mean = pairwise_sum(values) / n;
  std::vector<double> d2(values.size()), d4(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - mean;
    d2[i] = d * d;
    d4[i] = d2[i] * d2[i];
  }
  const double m2 = pairwise_sum(d2) / n;
  const double m4 = pairwise_sum(d4) / n;
  const double s2 = m2 * n / (n - 1.0);
  return {s2, std::sqrt(std::max(m4 - m2 * m2, 0.0) / n)};
}

double weighted_moment(std::span<const WeightedSample> samples, int k) {
  const double total = total_weight(samples);
  std::vector<double> terms(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    terms[i] = samples[i].weight * std::pow(samples[i].value, k);
  return pairwise_sum(terms) / total;
}

WeightedMoments weighted_mean_variance(std::span<const WeightedSample> samples) {
  const double total = total_weight(samples);
  std::vector<double> terms(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) terms[i] = samples[i].weight * samples[i].value;
  const double mean = pairwise_sum(terms) / total;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i].value - mean;
    terms[i] = samples[i].weight * d * d;
  }
  return {mean, pairwise_sum(terms) / total};
}

double effective_sample_size(std::span<const WeightedSample> samples) {
  const double total = total_weight(samples);
  std::vector<double> sq(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) sq[i] = samples[i].weight * samples[i].weight;
  return total * total / pairwise_sum(sq);
}

double weight_ratio_ess(std::span<const WeightedSample> samples) {
  const double total = total_weight(samples);
  double wmax = 0.0;
  for (const auto& s : samples) wmax = std::max(wmax, s.weight);
  return total / wmax;
}

double ks_distance(std::span<const double> a, std::span<const WeightedSample> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_distance: empty sample");
  const double total_b = total_weight(b);

  std::vector<double> sa(a.begin(), a.end());
  std::sort(sa.begin(), sa.end());
  std::vector<WeightedSample> sb(b.begin(), b.end());
  std::sort(sb.begin(), sb.end(),
            [](const WeightedSample& x, const WeightedSample& y) { return x.value < y.value; });

  // Walk the pooled distinct values; both CDFs are evaluated after absorbing
  // every sample equal to the current value (right-continuity).
  const double na = static_cast<double>(sa.size());
  std::size_t ia = 0, ib = 0;
  double cum_b = 0.0, sup = 0.0;
  while (ia < sa.size() || ib < sb.size()) {
    double v;
    if (ib >= sb.size() || (ia < sa.size() && sa[ia] <= sb[ib].value))
      v = sa[ia];
    else
      v = sb[ib].value;
    while (ia < sa.size() && sa[ia] == v) ++ia;
    while (ib < sb.size() && sb[ib].value == v) cum_b += sb[ib++].weight;
    const double fa = static_cast<double>(ia) / na;
    const double fb = ib == sb.size() ? 1.0 : cum_b / total_b;
    sup = std::max(sup, std::abs(fa - fb));
  }
  return std::min(sup, 1.0);
}

double ks_distance(std::span<const double> a, std::span<const double> b) {
  std::vector<WeightedSample> wb(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) wb[i] = {b[i], 1.0};
  return ks_distance(a, wb);
}

double ks_critical_value(double alpha, double n, double m) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c * std::sqrt((n + m) / (n * m));
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 points");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

double sample_stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  return mean_and_stderr(values).std_error * std::sqrt(static_cast<double>(values.size()));
}

}  // namespace stochsplit

