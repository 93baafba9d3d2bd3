#pragma once

// Statistics toolkit: Pearson correlation, Fisher z, Wilcoxon signed-rank
// (exact and normal-approximation paths), Mann-Whitney rank-sum, SEM, and
// the group-level evaluation report used by the mapping analyses.

#include "imago/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace imago::stats {

/// Sample Pearson correlation. Throws if either input is constant or the
/// lengths differ or n < 2.
inline double pearson_r(const Vector& x, const Vector& y) {
  require(x.size() == y.size(), "pearson_r: length mismatch");
  require(x.size() >= 2, "pearson_r: need at least 2 samples");
  const Vector a = x.array() - x.mean();
  const Vector b = y.array() - y.mean();
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, "pearson_r: constant input");
  double r = a.dot(b) / (na * nb);
  return std::clamp(r, -1.0, 1.0);
}

/// Like pearson_r but returns nullopt instead of throwing on constant input.
inline std::optional<double> pearson_r_or_null(const Vector& x, const Vector& y) {
  require(x.size() == y.size(), "pearson_r: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const Vector a = x.array() - x.mean();
  const Vector b = y.array() - y.mean();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Fisher z-transform, atanh(r), with |r| clamped to 1 - 1e-12 so that
/// r = +/-1 maps to a large finite value. Throws if |r| > 1.
inline double fisher_z(double r) {
  require(std::isfinite(r) && std::abs(r) <= 1.0,
          "fisher_z: correlation outside [-1, 1]");
  const double limit = 1.0 - 1e-12;
  return std::atanh(std::clamp(r, -limit, limit));
}

/// Standard error of the mean: sample sd / sqrt(n). Requires n >= 2.
inline double sem(const Vector& v) {
  return sample_sd(v) / std::sqrt(static_cast<double>(v.size()));
}

inline double sem(const std::vector<double>& v) {
  Vector m = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
  return sem(m);
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Average ranks (1-based) with ties sharing the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

enum class WilcoxonMethod { Auto, Exact, Normal };

struct WilcoxonResult {
  double statistic = 0.0;   ///< W = min(W+, W-) over non-zero differences
  double p_value = 1.0;     ///< two-sided
  int n_nonzero = 0;        ///< differences that entered the test
  bool exact = false;       ///< which path produced the p-value
  bool degenerate = false;  ///< fewer than 5 non-zero differences; p forced to 1
};

namespace detail {

/// Exact two-sided p for W+ <= w_low via DP over doubled ranks (ties allowed).
/// The null distribution of W+ is symmetric about total/2, so
/// p = 2 * P(W+ <= w_low), clamped to 1.
inline double wilcoxon_exact_p(const std::vector<double>& ranks, double w_low) {
  std::vector<int> doubled(ranks.size());
  int total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = static_cast<int>(std::llround(2.0 * ranks[i]));
    total += doubled[i];
  }
  // counts[s] = number of sign assignments with doubled W+ == s
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  int reach = 0;
  for (int d : doubled) {
    reach += d;
    for (int s = reach; s >= d; --s)
      counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - d)];
  }
  const int w2 = static_cast<int>(std::llround(2.0 * w_low));
  double below = 0.0;
  for (int s = 0; s <= std::min(w2, total); ++s)
    below += counts[static_cast<std::size_t>(s)];
  const double denom = std::ldexp(1.0, static_cast<int>(ranks.size()));
  return std::min(1.0, 2.0 * below / denom);
}

}  // namespace detail

/// Two-sided Wilcoxon signed-rank test on paired differences x - y.
/// Zero differences are dropped. Exact enumeration (DP, correct under ties)
/// for n <= 25 in Auto mode; otherwise a normal approximation with tie and
/// continuity corrections. Fewer than 5 non-zero differences yields p = 1
/// with the degenerate flag set.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x,
                                           const std::vector<double>& y,
                                           WilcoxonMethod method = WilcoxonMethod::Auto) {
  require(x.size() == y.size(), "wilcoxon_signed_rank: length mismatch");
  std::vector<double> diffs;
  diffs.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    require(std::isfinite(d), "wilcoxon_signed_rank: non-finite difference");
    if (d != 0.0) diffs.push_back(d);
  }

  WilcoxonResult res;
  res.n_nonzero = static_cast<int>(diffs.size());
  if (diffs.size() < 5) {
    res.degenerate = true;
    res.p_value = 1.0;
    res.statistic = 0.0;
    return res;
  }

  std::vector<double> abs_diffs(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) abs_diffs[i] = std::abs(diffs[i]);
  const std::vector<double> ranks = average_ranks(abs_diffs);

  double w_plus = 0.0;
  double w_minus = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i)
    (diffs[i] > 0.0 ? w_plus : w_minus) += ranks[i];
  const double w = std::min(w_plus, w_minus);
  res.statistic = w;

  const std::size_t n = diffs.size();
  bool use_exact = (method == WilcoxonMethod::Exact) ||
                   (method == WilcoxonMethod::Auto && n <= 25);
  if (use_exact) {
    res.exact = true;
    res.p_value = detail::wilcoxon_exact_p(ranks, w);
    return res;
  }

  // Normal approximation on W+ with tie correction in the variance and a
  // continuity correction of 1/2 toward the mean.
  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = abs_diffs;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  require(var > 0.0, "wilcoxon_signed_rank: zero variance (all ties)");
  const double dev = w_plus - mean;
  double z = 0.0;
  if (dev > 0.5) z = (dev - 0.5) / std::sqrt(var);
  else if (dev < -0.5) z = (dev + 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
  return res;
}

struct RankSumResult {
  double u_statistic = 0.0;  ///< Mann-Whitney U for the first sample
  double p_value = 1.0;
  double z = 0.0;
};

/// Mann-Whitney rank-sum test (normal approximation with tie correction).
/// greater = true tests the one-sided alternative "x tends larger than y";
/// otherwise the p-value is two-sided.
inline RankSumResult rank_sum(const std::vector<double>& x, const std::vector<double>& y,
                              bool greater = false) {
  require(x.size() >= 1 && y.size() >= 1, "rank_sum: empty sample");
  const double n1 = static_cast<double>(x.size());
  const double n2 = static_cast<double>(y.size());
  std::vector<double> pooled;
  pooled.reserve(x.size() + y.size());
  pooled.insert(pooled.end(), x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  for (double v : pooled) require(std::isfinite(v), "rank_sum: non-finite value");
  const std::vector<double> ranks = average_ranks(pooled);

  double r1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) r1 += ranks[i];
  const double u1 = r1 - n1 * (n1 + 1.0) / 2.0;

  double tie_term = 0.0;
  {
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double n = n1 + n2;
  const double mean = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  require(var > 0.0, "rank_sum: zero variance (all values tied)");

  const double dev = u1 - mean;
  double z = 0.0;
  if (dev > 0.5) z = (dev - 0.5) / std::sqrt(var);
  else if (dev < -0.5) z = (dev + 0.5) / std::sqrt(var);

  RankSumResult res;
  res.u_statistic = u1;
  res.z = z;
  res.p_value = greater ? 1.0 - normal_cdf(z)
                        : std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
  return res;
}

inline double log_binom_coeff(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// P(X >= k) for X ~ Binomial(n, p). Exact summation in log space.
inline double binomial_sf(int k, int n, double p) {
  require(n >= 0 && k >= 0 && k <= n, "binomial_sf: bad k or n");
  require(p >= 0.0 && p <= 1.0, "binomial_sf: p outside [0, 1]");
  if (k == 0) return 1.0;
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  double total = 0.0;
  for (int i = k; i <= n; ++i)
    total += std::exp(log_binom_coeff(n, i) + i * std::log(p) +
                      (n - i) * std::log1p(-p));
  return std::min(1.0, total);
}

/// Exact (Clopper-Pearson) two-sided confidence interval for a binomial
/// proportion with k successes out of n.
inline std::pair<double, double> binomial_ci(int k, int n, double alpha = 0.05) {
  require(n >= 1 && k >= 0 && k <= n, "binomial_ci: bad k or n");
  require(alpha > 0.0 && alpha < 1.0, "binomial_ci: bad alpha");
  const auto bisect = [&](auto f) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  };
  const double half = alpha / 2.0;
  const double lower =
      (k == 0) ? 0.0 : bisect([&](double p) { return binomial_sf(k, n, p) < half; });
  const double upper =
      (k == n) ? 1.0
               : bisect([&](double p) { return 1.0 - binomial_sf(k + 1, n, p) >= half; });
  return {lower, upper};
}

/// Survival function of the Kolmogorov distribution,
/// Q(x) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2), with the
/// theta-function form for small x where the alternating series stalls.
inline double kolmogorov_sf(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.0) {
    // 1 - sqrt(2 pi)/x * sum exp(-(2k-1)^2 pi^2 / (8 x^2))
    const double c = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
    double total = 0.0;
    for (int k = 1; k <= 20; ++k) {
      const double m = 2.0 * k - 1.0;
      total += std::exp(-m * m * c);
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / x * total, 0.0, 1.0);
  }
  double total = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    total += (k % 2 == 1) ? term : -term;
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * total, 0.0, 1.0);
}

/// Two-sample Kolmogorov-Smirnov test, asymptotic p-value:
/// p = Q(sqrt(n1 n2 / (n1 + n2)) * D) with D the sup distance between the
/// empirical CDFs.
inline double ks_2samp_p(std::vector<double> a, std::vector<double> b) {
  require(a.size() >= 2 && b.size() >= 2, "ks_2samp: need >= 2 values per sample");
  for (double v : a) require(std::isfinite(v), "ks_2samp: non-finite value");
  for (double v : b) require(std::isfinite(v), "ks_2samp: non-finite value");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  return kolmogorov_sf(std::sqrt(ne) * d);
}

/// Group-level comparison of per-subject correlations between a real model
/// and its matched null.
struct EvalReport {
  std::vector<std::string> subject_ids;
  std::vector<double> r_true;
  std::vector<double> r_null;
  std::vector<double> z_true;
  std::vector<double> z_null;
  double mean_r_true = 0.0;
  double mean_r_null = 0.0;
  double sem_r_true = 0.0;
  double sem_r_null = 0.0;
  double wilcoxon_w = 0.0;
  double p_value = 1.0;
  int n_subjects = 0;
};

/// Builds the report: Fisher-z both sides, paired Wilcoxon signed-rank on
/// the z values, means and SEMs of the raw correlations.
inline EvalReport build_eval_report(const std::vector<std::string>& subject_ids,
                                    const std::vector<double>& r_true,
                                    const std::vector<double>& r_null) {
  require(subject_ids.size() == r_true.size() && r_true.size() == r_null.size(),
          "build_eval_report: length mismatch");
  require(r_true.size() >= 2, "build_eval_report: need at least 2 subjects");
  EvalReport rep;
  rep.subject_ids = subject_ids;
  rep.r_true = r_true;
  rep.r_null = r_null;
  rep.n_subjects = static_cast<int>(r_true.size());
  for (std::size_t i = 0; i < r_true.size(); ++i) {
    rep.z_true.push_back(fisher_z(r_true[i]));
    rep.z_null.push_back(fisher_z(r_null[i]));
  }
  const auto mean_of = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  rep.mean_r_true = mean_of(r_true);
  rep.mean_r_null = mean_of(r_null);
  rep.sem_r_true = sem(r_true);
  rep.sem_r_null = sem(r_null);
  const WilcoxonResult w = wilcoxon_signed_rank(rep.z_true, rep.z_null);
  rep.wilcoxon_w = w.statistic;
  rep.p_value = w.p_value;
  return rep;
}

}  // namespace imago::stats
