#pragma once

// Representational similarity analysis and the correlation classifier.
//
// The trial-by-trial similarity matrix holds, for every trial pair, the
// Pearson correlation of their time courses computed per channel and
// averaged over channels. Block averages reduce it to one entry per
// condition pair, and the classifier assigns each trial to the condition
// whose other trials correlate best with it.

#include "imago/common.hpp"
#include "imago/trial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace imago {

inline constexpr double kChanceLevel = 1.0 / kNumConditions;

struct SimilarityMatrix {
  Matrix values;                             ///< N x N, symmetric, unit diagonal
  std::vector<ConditionLabel> trial_labels;  ///< condition-blocked ordering

  void validate() const {
    const Index n = values.rows();
    require(values.cols() == n, "similarity matrix is not square");
    require(static_cast<Index>(trial_labels.size()) == n,
            "similarity labels do not match matrix size");
    require(n >= 1, "similarity matrix is empty");
    for (Index i = 0; i < n; ++i)
      require(std::abs(values(i, i) - 1.0) < 1e-12, "similarity diagonal is not 1");
    require((values - values.transpose()).cwiseAbs().maxCoeff() < 1e-12,
            "similarity matrix is not symmetric");
    require(values.minCoeff() >= -1.0 - 1e-12 && values.maxCoeff() <= 1.0 + 1e-12,
            "similarity values outside [-1, 1]");
    // Each condition must occupy one contiguous run.
    std::vector<bool> seen(kNumConditions, false);
    int prev = -1;
    for (const ConditionLabel& l : trial_labels) {
      const int idx = l.index();
      if (idx != prev) {
        require(!seen[static_cast<std::size_t>(idx)],
                "similarity ordering is not condition-blocked");
        seen[static_cast<std::size_t>(idx)] = true;
        prev = idx;
      }
    }
  }
};

/// Trial-by-trial similarity: per-channel Pearson correlations averaged
/// over the channels that have nonzero variance in both trials of a pair.
/// Trials are ordered by (condition, repetition) regardless of input order.
inline SimilarityMatrix trial_similarity(const SubjectDataset& subject) {
  subject.validate();
  const Index n = static_cast<Index>(subject.trials.size());
  const Index c = subject.channels();
  const Index t = subject.trials.front().samples();
  require(t >= 2, "trial_similarity: need at least 2 samples");

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = subject.trials[a];
    const auto& tb = subject.trials[b];
    return std::make_pair(ta.condition.index(), ta.repetition) <
           std::make_pair(tb.condition.index(), tb.repetition);
  });

  // Per-trial channel-centered data and channel norms; a channel with zero
  // variance in a trial is excluded from that trial's pairings.
  std::vector<Matrix> centered;
  std::vector<Vector> norms;
  centered.reserve(static_cast<std::size_t>(n));
  for (std::size_t i : order) {
    Matrix x = subject.trials[i].data;
    x.colwise() -= x.rowwise().mean();
    norms.push_back(x.rowwise().norm());
    centered.push_back(std::move(x));
  }

  SimilarityMatrix sim;
  sim.values = Matrix::Identity(n, n);
  for (std::size_t i : order)
    sim.trial_labels.push_back(subject.trials[i].condition);

  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      double acc = 0.0;
      int n_valid = 0;
      for (Index ch = 0; ch < c; ++ch) {
        const double ni = norms[static_cast<std::size_t>(i)][ch];
        const double nj = norms[static_cast<std::size_t>(j)][ch];
        if (ni <= 0.0 || nj <= 0.0) continue;
        const double r = centered[static_cast<std::size_t>(i)].row(ch).dot(
                             centered[static_cast<std::size_t>(j)].row(ch)) /
                         (ni * nj);
        acc += std::clamp(r, -1.0, 1.0);
        ++n_valid;
      }
      require(n_valid > 0, "trial_similarity: all channels excluded for a trial pair");
      sim.values(i, j) = sim.values(j, i) = acc / n_valid;
    }
  }
  return sim;
}

struct BlockAverage {
  Matrix values;                          ///< K x K, K = number of present conditions
  std::vector<ConditionLabel> conditions; ///< in condition-index order
};

/// Condition-blocked reduction: entry (a, b) is the mean similarity between
/// trials of conditions a and b, excluding self-similarities on the diagonal
/// blocks.
inline BlockAverage block_average(const SimilarityMatrix& sim) {
  sim.validate();
  const Index n = sim.values.rows();

  std::vector<std::vector<Index>> groups(kNumConditions);
  for (Index i = 0; i < n; ++i)
    groups[static_cast<std::size_t>(sim.trial_labels[static_cast<std::size_t>(i)].index())]
        .push_back(i);

  BlockAverage out;
  for (const ConditionLabel cond : all_conditions())
    if (!groups[static_cast<std::size_t>(cond.index())].empty())
      out.conditions.push_back(cond);

  const Index k = static_cast<Index>(out.conditions.size());
  out.values = Matrix::Zero(k, k);
  for (Index a = 0; a < k; ++a) {
    for (Index b = 0; b < k; ++b) {
      const auto& ga = groups[static_cast<std::size_t>(out.conditions[static_cast<std::size_t>(a)].index())];
      const auto& gb = groups[static_cast<std::size_t>(out.conditions[static_cast<std::size_t>(b)].index())];
      double acc = 0.0;
      int cnt = 0;
      for (Index i : ga)
        for (Index j : gb) {
          if (a == b && i == j) continue;
          acc += sim.values(i, j);
          ++cnt;
        }
      require(cnt > 0, "block_average: condition " +
                           out.conditions[static_cast<std::size_t>(a)].name() +
                           " has no off-diagonal entries");
      out.values(a, b) = acc / cnt;
    }
  }
  return out;
}

struct ConfusionMatrix {
  Eigen::Matrix<int, kNumConditions, kNumConditions> counts;  ///< rows: true, cols: predicted
  Matrix percentages;  ///< row-normalized, each row sums to 100
};

struct ClassifyResult {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
};

/// Nearest-condition classification on a precomputed similarity matrix:
/// each trial goes to the condition whose other trials have the highest
/// mean similarity to it (self excluded, ties to the lowest condition
/// index). Requires at least 2 trials in every condition.
inline ClassifyResult classify_from_similarity(const SimilarityMatrix& sim) {
  sim.validate();
  const Index n = sim.values.rows();

  std::vector<std::vector<Index>> groups(kNumConditions);
  for (Index i = 0; i < n; ++i)
    groups[static_cast<std::size_t>(sim.trial_labels[static_cast<std::size_t>(i)].index())]
        .push_back(i);
  for (int cidx = 0; cidx < kNumConditions; ++cidx)
    require(groups[static_cast<std::size_t>(cidx)].size() >= 2,
            "classify: condition " + ConditionLabel::from_index(cidx).name() +
                " has fewer than 2 trials");

  ClassifyResult res;
  res.confusion.counts.setZero();
  int correct = 0;
  for (Index i = 0; i < n; ++i) {
    const int true_idx = sim.trial_labels[static_cast<std::size_t>(i)].index();
    int best = -1;
    double best_mean = 0.0;
    for (int cidx = 0; cidx < kNumConditions; ++cidx) {
      double acc = 0.0;
      int cnt = 0;
      for (Index j : groups[static_cast<std::size_t>(cidx)]) {
        if (j == i) continue;
        acc += sim.values(i, j);
        ++cnt;
      }
      const double mean = acc / cnt;
      if (best < 0 || mean > best_mean) {
        best = cidx;
        best_mean = mean;
      }
    }
    res.confusion.counts(true_idx, best) += 1;
    if (best == true_idx) ++correct;
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  res.confusion.percentages = Matrix::Zero(kNumConditions, kNumConditions);
  for (int r = 0; r < kNumConditions; ++r) {
    const double row_sum = static_cast<double>(res.confusion.counts.row(r).sum());
    for (int col = 0; col < kNumConditions; ++col)
      res.confusion.percentages(r, col) =
          100.0 * static_cast<double>(res.confusion.counts(r, col)) / row_sum;
  }
  return res;
}

inline ClassifyResult correlation_classify(const SubjectDataset& subject) {
  return classify_from_similarity(trial_similarity(subject));
}

}  // namespace imago
