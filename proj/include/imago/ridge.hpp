#pragma once

// Sliding-window ridge regression from imagined to listened responses.
//
// Within each temporal window, time samples pooled across training pairs
// form the rows of an instantaneous channel-to-channel regression. Held-out
// pairs are scored by per-channel Pearson correlation between predicted and
// actual listened windows, with a label-shuffled null sharing the exact
// pipeline.

#include "imago/common.hpp"
#include "imago/pairing.hpp"
#include "imago/rng.hpp"
#include "imago/stats.hpp"
#include "imago/trial.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

namespace imago {

struct WindowSpec {
  double window_ms = 500.0;
  double step_ms = 100.0;
  double sample_rate_hz = 0.0;

  Index window_samples() const { return detail_to_samples(window_ms, "window"); }
  Index step_samples() const { return detail_to_samples(step_ms, "step"); }

  void validate() const {
    require(sample_rate_hz > 0.0, "window spec: sample rate must be positive");
    const Index w = window_samples();
    const Index s = step_samples();
    require(s > 0, "window spec: step must be positive");
    require(w >= s, "window spec: window must be >= step");
  }

 private:
  Index detail_to_samples(double ms, const char* what) const {
    require(sample_rate_hz > 0.0, "window spec: sample rate must be positive");
    const double exact = ms / 1000.0 * sample_rate_hz;
    const double rounded = std::round(exact);
    require(std::abs(exact - rounded) < 1e-9 && rounded >= 1.0,
            std::string("window spec: ") + what +
                " does not convert to a whole positive sample count");
    return static_cast<Index>(rounded);
  }
};

/// Half-open sample ranges [start, end), starting at 0 and advancing by the
/// step; every window lies fully inside [0, T).
inline std::vector<std::pair<Index, Index>> sliding_windows(Index t, const WindowSpec& spec) {
  spec.validate();
  const Index win = spec.window_samples();
  const Index step = spec.step_samples();
  require(t >= win, "sliding_windows: trial shorter than one window");
  std::vector<std::pair<Index, Index>> out;
  for (Index start = 0; start + win <= t; start += step) out.emplace_back(start, start + win);
  return out;
}

namespace detail {

/// Solves (G + lambda I) W = H and checks the normal-equation residual.
inline Matrix solve_regularized(const Matrix& g, const Matrix& h, double lambda) {
  Matrix a = g;
  a.diagonal().array() += lambda;
  const Matrix w = a.ldlt().solve(h);
  const double rel = (a * w - h).norm() / std::max(h.norm(), 1e-300);
  require(all_finite(w) && (h.norm() == 0.0 || rel < 1e-8),
          "ridge: normal equations not solvable (singular fit with lambda = " +
              std::to_string(lambda) + ")");
  return w;
}

}  // namespace detail

/// Ridge solution W = argmin |Y - XW|^2 + lambda |W|^2 for row-sample
/// matrices X (n x C_in) and Y (n x C_out).
inline Matrix ridge_fit(const Matrix& x, const Matrix& y, double lambda) {
  require(x.rows() == y.rows(), "ridge_fit: X and Y row counts differ");
  require(x.rows() >= 1, "ridge_fit: empty problem");
  require(lambda >= 0.0, "ridge_fit: lambda must be >= 0");
  if (lambda == 0.0)
    require(x.colPivHouseholderQr().rank() == x.cols(),
            "ridge_fit: singular design with lambda = 0");
  return detail::solve_regularized(x.transpose() * x, x.transpose() * y, lambda);
}

struct RidgeMapModel {
  std::vector<Matrix> weights;  ///< one C x C matrix per window
  double lambda = 0.0;
  WindowSpec window_spec;
};

struct LotoEvaluation {
  /// r[pair][window][channel]; missing where prediction or target window had
  /// zero variance.
  std::vector<std::vector<std::vector<std::optional<double>>>> r;
  double mean_r = 0.0;  ///< over all valid entries
  double sem_r = 0.0;
  Index n_valid = 0;
  Index n_missing = 0;
};

namespace detail {

inline void validate_ridge_inputs(const SubjectDataset& subject, const TrialPairing& pairing,
                                  Index t) {
  require(!pairing.pairs.empty(), "ridge: pairing is empty");
  require(pairing.subject_id == subject.subject_id, "ridge: pairing subject mismatch");
  std::vector<int> per_stim(kNumStimuli, 0);
  for (const TrialPair& p : pairing.pairs) {
    require(p.imagined_index >= 0 &&
                p.imagined_index < static_cast<int>(subject.trials.size()),
            "ridge: pair references a missing trial");
    require(p.target.rows() == subject.channels() && p.target.cols() == t,
            "ridge: pair target shape mismatch");
    ++per_stim[static_cast<std::size_t>(static_cast<int>(p.stimulus))];
  }
  for (int s = 0; s < kNumStimuli; ++s)
    require(per_stim[static_cast<std::size_t>(s)] == 0 ||
                per_stim[static_cast<std::size_t>(s)] >= 2,
            "ridge: need >= 2 pairs per present stimulus");
  require(static_cast<Index>(pairing.pairs.size()) >= 2, "ridge: need >= 2 pairs");
}

/// Per-pair gram blocks of one window: x, y are win x C slices, g = x'x,
/// h = x'y. A single code path keeps fold sums bit-reproducible everywhere.
struct WindowBlocks {
  std::vector<Matrix> x, y, g, h;
};

inline WindowBlocks window_blocks(const SubjectDataset& subject, const TrialPairing& pairing,
                                  Index start, Index win) {
  WindowBlocks b;
  const std::size_t n = pairing.pairs.size();
  b.x.reserve(n);
  b.y.reserve(n);
  b.g.reserve(n);
  b.h.reserve(n);
  for (const TrialPair& p : pairing.pairs) {
    const Matrix& imag = subject.trials[static_cast<std::size_t>(p.imagined_index)].data;
    Matrix x = imag.middleCols(start, win).transpose();
    Matrix y = p.target.middleCols(start, win).transpose();
    b.g.push_back(x.transpose() * x);
    b.h.push_back(x.transpose() * y);
    b.x.push_back(std::move(x));
    b.y.push_back(std::move(y));
  }
  return b;
}

inline Matrix fold_weights(const WindowBlocks& b, std::size_t exclude, double lambda) {
  const Index c = b.g.front().rows();
  Matrix g = Matrix::Zero(c, c);
  Matrix h = Matrix::Zero(c, b.h.front().cols());
  for (std::size_t p = 0; p < b.g.size(); ++p) {
    if (p == exclude) continue;
    g += b.g[p];
    h += b.h[p];
  }
  return solve_regularized(g, h, lambda);
}

}  // namespace detail

/// Per-window ridge weights trained on every pair except `exclude_pair`
/// (pass -1 to train on all pairs). This is exactly the model each LOTO
/// fold uses.
inline RidgeMapModel fit_loto_fold(const SubjectDataset& subject, const TrialPairing& pairing,
                                   const WindowSpec& spec, double lambda, int exclude_pair) {
  subject.validate();
  require(lambda >= 0.0, "ridge: lambda must be >= 0");
  const Index t = subject.trials.front().samples();
  detail::validate_ridge_inputs(subject, pairing, t);
  require(exclude_pair >= -1 && exclude_pair < static_cast<int>(pairing.pairs.size()),
          "ridge: exclude_pair out of range");

  RidgeMapModel model;
  model.lambda = lambda;
  model.window_spec = spec;
  const std::size_t skip = exclude_pair < 0 ? pairing.pairs.size()
                                            : static_cast<std::size_t>(exclude_pair);
  for (const auto& [start, end] : sliding_windows(t, spec)) {
    const auto blocks = detail::window_blocks(subject, pairing, start, end - start);
    model.weights.push_back(detail::fold_weights(blocks, skip, lambda));
  }
  return model;
}

/// Leave-one-pair-out evaluation: each pair's listened windows are predicted
/// from its imagined windows using weights trained on all other pairs;
/// per-channel Pearson correlations are aggregated over pairs, windows, and
/// channels.
inline LotoEvaluation loto_evaluate(const SubjectDataset& subject, const TrialPairing& pairing,
                                    const WindowSpec& spec, double lambda) {
  subject.validate();
  require(lambda >= 0.0, "ridge: lambda must be >= 0");
  const Index t = subject.trials.front().samples();
  const Index c = subject.channels();
  detail::validate_ridge_inputs(subject, pairing, t);

  const auto windows = sliding_windows(t, spec);
  const std::size_t n_pairs = pairing.pairs.size();

  LotoEvaluation eval;
  eval.r.assign(n_pairs, std::vector<std::vector<std::optional<double>>>(
                             windows.size(), std::vector<std::optional<double>>(
                                                 static_cast<std::size_t>(c))));
  std::vector<double> valid;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto [start, end] = windows[w];
    const auto blocks = detail::window_blocks(subject, pairing, start, end - start);
    for (std::size_t f = 0; f < n_pairs; ++f) {
      const Matrix weights = detail::fold_weights(blocks, f, lambda);
      const Matrix pred = blocks.x[f] * weights;  // win x C
      for (Index ch = 0; ch < c; ++ch) {
        const auto r = stats::pearson_r_or_null(pred.col(ch), blocks.y[f].col(ch));
        eval.r[f][w][static_cast<std::size_t>(ch)] = r;
        if (r)
          valid.push_back(*r);
        else
          ++eval.n_missing;
      }
    }
  }
  require(!valid.empty(), "loto_evaluate: every window was degenerate");
  eval.n_valid = static_cast<Index>(valid.size());
  double acc = 0.0;
  for (double v : valid) acc += v;
  eval.mean_r = acc / static_cast<double>(valid.size());
  eval.sem_r = valid.size() >= 2 ? stats::sem(valid) : 0.0;
  return eval;
}

struct NullEvaluation {
  LotoEvaluation eval;
  std::vector<int> permutation;  ///< pair i was scored against target of pairs[perm[i]]
  std::uint64_t seed = 0;
};

/// Shuffled-pairing null: the imagined-to-target assignment is permuted
/// uniformly at random (derangement not enforced), then evaluated by the
/// identical LOTO pipeline.
inline NullEvaluation null_shuffled_evaluate(const SubjectDataset& subject,
                                             const TrialPairing& pairing,
                                             const WindowSpec& spec, double lambda,
                                             std::uint64_t seed) {
  NullEvaluation out;
  out.seed = seed;
  Rng rng(derive_seed(seed, "ridge-null"));
  out.permutation = rng.permutation(static_cast<int>(pairing.pairs.size()));
  const TrialPairing shuffled = apply_target_permutation(pairing, out.permutation);
  out.eval = loto_evaluate(subject, shuffled, spec, lambda);
  return out;
}

struct WithinBetweenResult {
  std::vector<double> within;   ///< predicted vs listened trials, same stimulus
  std::vector<double> between;  ///< predicted vs listened trials, other stimuli
  Vector bin_edges;             ///< shared histogram edges over [-1, 1]
  std::vector<int> within_counts;
  std::vector<int> between_counts;
};

namespace detail {

/// Window-major flattening used for full-trial prediction correlations:
/// each window's C x win block is appended column-major.
inline Vector windowed_concat(const Matrix& data,
                              const std::vector<std::pair<Index, Index>>& windows) {
  const Index c = data.rows();
  Index total = 0;
  for (const auto& [s, e] : windows) total += c * (e - s);
  Vector out(total);
  Index at = 0;
  for (const auto& [s, e] : windows) {
    const Index len = c * (e - s);
    Eigen::Map<Matrix>(out.data() + at, c, e - s) = data.middleCols(s, e - s);
    at += len;
  }
  return out;
}

}  // namespace detail

/// Correlates each held-out pair's full predicted listened response against
/// every listened trial, split by whether the trial plays the pair's own
/// stimulus.
inline WithinBetweenResult within_between_class(const SubjectDataset& subject,
                                                const TrialPairing& pairing,
                                                const WindowSpec& spec, double lambda,
                                                int n_bins = 20) {
  subject.validate();
  require(lambda >= 0.0, "ridge: lambda must be >= 0");
  require(n_bins >= 1, "within_between: n_bins must be positive");
  const Index t = subject.trials.front().samples();
  const Index c = subject.channels();
  detail::validate_ridge_inputs(subject, pairing, t);
  {
    bool multi = false;
    for (const TrialPair& p : pairing.pairs)
      if (p.stimulus != pairing.pairs.front().stimulus) multi = true;
    require(multi, "within_between: need >= 2 stimuli present");
  }

  const auto windows = sliding_windows(t, spec);
  const std::size_t n_pairs = pairing.pairs.size();

  // Predicted concatenations, built window by window.
  Index concat_len = 0;
  for (const auto& [s, e] : windows) concat_len += c * (e - s);
  std::vector<Vector> predicted(n_pairs, Vector(concat_len));
  Index at = 0;
  for (const auto& [start, end] : windows) {
    const Index win = end - start;
    const auto blocks = detail::window_blocks(subject, pairing, start, win);
    for (std::size_t f = 0; f < n_pairs; ++f) {
      const Matrix weights = detail::fold_weights(blocks, f, lambda);
      Eigen::Map<Matrix>(predicted[f].data() + at, c, win) =
          (blocks.x[f] * weights).transpose();
    }
    at += c * win;
  }

  WithinBetweenResult res;
  for (std::size_t f = 0; f < n_pairs; ++f) {
    for (const auto& tr : subject.trials) {
      if (tr.condition.task != Task::Listen) continue;
      const Vector target = detail::windowed_concat(tr.data, windows);
      const auto r = stats::pearson_r_or_null(predicted[f], target);
      if (!r) continue;
      if (tr.condition.stimulus == pairing.pairs[f].stimulus)
        res.within.push_back(*r);
      else
        res.between.push_back(*r);
    }
  }
  require(!res.within.empty() && !res.between.empty(),
          "within_between: a correlation class is empty");

  res.bin_edges = Vector::LinSpaced(n_bins + 1, -1.0, 1.0);
  res.within_counts.assign(static_cast<std::size_t>(n_bins), 0);
  res.between_counts.assign(static_cast<std::size_t>(n_bins), 0);
  const auto bin_of = [&](double v) {
    const int b = static_cast<int>(std::floor((v + 1.0) / 2.0 * n_bins));
    return std::clamp(b, 0, n_bins - 1);
  };
  for (double v : res.within) ++res.within_counts[static_cast<std::size_t>(bin_of(v))];
  for (double v : res.between) ++res.between_counts[static_cast<std::size_t>(bin_of(v))];
  return res;
}

}  // namespace imago
