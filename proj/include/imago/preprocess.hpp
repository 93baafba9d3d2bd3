#pragma once

// Preprocessing stages: bad-channel screening, per-channel z-scoring, and
// decimation, plus the orchestrated pipeline
// screen -> bandpass -> DSS -> z-score -> decimate.

#include "imago/bandpass.hpp"
#include "imago/common.hpp"
#include "imago/dss.hpp"
#include "imago/trial.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace imago {

struct ChannelScreenResult {
  std::vector<int> kept;     ///< channel indices retained, ascending
  std::vector<int> dropped;  ///< channel indices removed, ascending
  Vector variances;          ///< per-channel variance pooled over all trials
  Vector loo_z;              ///< leave-one-out z-score of log10 variance
  double threshold = 5.0;
};

/// Flags channels whose pooled log-variance is extreme. Each channel is
/// z-scored against the statistics of the *other* channels (leave-one-out),
/// so a single extreme channel cannot mask itself by inflating the pooled
/// spread. Channels with zero variance are always dropped. Requires at
/// least 3 channels.
inline ChannelScreenResult screen_bad_channels(const SubjectDataset& subject,
                                               double z_threshold = 5.0) {
  subject.validate();
  require(z_threshold > 0.0, "screen_bad_channels: threshold must be positive");
  const Index c = subject.channels();
  require(c >= 3, "screen_bad_channels: need at least 3 channels");

  // Pooled per-channel variance across all trials and samples.
  const double n_total =
      static_cast<double>(subject.trials.size()) *
      static_cast<double>(subject.trials.front().samples());
  Vector mean = Vector::Zero(c);
  for (const auto& tr : subject.trials) mean += tr.data.rowwise().sum();
  mean /= n_total;
  Vector var = Vector::Zero(c);
  for (const auto& tr : subject.trials)
    var += (tr.data.colwise() - mean).array().square().rowwise().sum().matrix();
  var /= n_total;

  ChannelScreenResult res;
  res.variances = var;
  res.threshold = z_threshold;
  res.loo_z = Vector::Zero(c);

  Vector logv(c);
  std::vector<bool> zero(static_cast<std::size_t>(c), false);
  for (Index j = 0; j < c; ++j) {
    if (var[j] <= 0.0) {
      zero[static_cast<std::size_t>(j)] = true;
      logv[j] = 0.0;  // placeholder; channel is dropped unconditionally
    } else {
      logv[j] = std::log10(var[j]);
    }
  }

  for (Index j = 0; j < c; ++j) {
    if (zero[static_cast<std::size_t>(j)]) {
      res.loo_z[j] = std::numeric_limits<double>::infinity();
      res.dropped.push_back(static_cast<int>(j));
      continue;
    }
    double sum = 0.0, sum2 = 0.0;
    Index n = 0;
    for (Index i = 0; i < c; ++i) {
      if (i == j || zero[static_cast<std::size_t>(i)]) continue;
      sum += logv[i];
      sum2 += logv[i] * logv[i];
      ++n;
    }
    require(n >= 2, "screen_bad_channels: too few valid channels to screen against");
    const double m = sum / static_cast<double>(n);
    const double ss = std::max(0.0, sum2 / static_cast<double>(n) - m * m);
    const double sd = std::sqrt(ss * static_cast<double>(n) / static_cast<double>(n - 1));
    double z;
    if (sd == 0.0) {
      z = (logv[j] == m) ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
      z = (logv[j] - m) / sd;
    }
    res.loo_z[j] = z;
    if (std::abs(z) > z_threshold) res.dropped.push_back(static_cast<int>(j));
    else res.kept.push_back(static_cast<int>(j));
  }
  require(!res.kept.empty(), "screen_bad_channels: all channels flagged bad");
  return res;
}

/// Returns a copy of the dataset restricted to the given channel indices.
inline SubjectDataset apply_channel_selection(const SubjectDataset& subject,
                                              const std::vector<int>& kept) {
  require(!kept.empty(), "apply_channel_selection: empty channel list");
  SubjectDataset out;
  out.subject_id = subject.subject_id;
  for (int j : kept) {
    require(j >= 0 && j < static_cast<int>(subject.channels()),
            "apply_channel_selection: channel index out of range");
    out.channel_names.push_back(subject.channel_names[static_cast<std::size_t>(j)]);
  }
  for (const auto& tr : subject.trials) {
    TrialRecord t = tr;
    Matrix sel(static_cast<Index>(kept.size()), tr.samples());
    for (std::size_t r = 0; r < kept.size(); ++r)
      sel.row(static_cast<Index>(r)) = tr.data.row(kept[r]);
    t.data = std::move(sel);
    out.trials.push_back(std::move(t));
  }
  return out;
}

/// Applies the bandpass (zero-phase) to every channel of every trial.
inline SubjectDataset filter_subject(const SubjectDataset& subject, const IirCascade& f) {
  SubjectDataset out = subject;
  for (auto& tr : out.trials) tr.data = filtfilt_rows(f, tr.data);
  return out;
}

struct ZScoreStats {
  Vector mean;  ///< per channel, pooled over all trials and samples
  Vector sd;    ///< population standard deviation
};

/// Per-channel z-scoring with statistics pooled across all trials of the
/// subject. Throws on constant channels.
inline SubjectDataset zscore_channels(const SubjectDataset& subject,
                                      ZScoreStats* stats_out = nullptr) {
  subject.validate();
  const Index c = subject.channels();
  const double n_total =
      static_cast<double>(subject.trials.size()) *
      static_cast<double>(subject.trials.front().samples());
  Vector mean = Vector::Zero(c);
  for (const auto& tr : subject.trials) mean += tr.data.rowwise().sum();
  mean /= n_total;
  Vector var = Vector::Zero(c);
  for (const auto& tr : subject.trials)
    var += (tr.data.colwise() - mean).array().square().rowwise().sum().matrix();
  var /= n_total;
  for (Index j = 0; j < c; ++j)
    require(var[j] > 0.0, "zscore_channels: constant channel " +
                              subject.channel_names[static_cast<std::size_t>(j)]);
  const Vector sd = var.cwiseSqrt();

  SubjectDataset out = subject;
  for (auto& tr : out.trials)
    tr.data = (tr.data.colwise() - mean).array().colwise() / sd.array();
  if (stats_out != nullptr) {
    stats_out->mean = mean;
    stats_out->sd = sd;
  }
  return out;
}

/// Keeps every factor-th sample starting at 0; output length ceil(T/factor).
inline Matrix decimate(const Matrix& data, int factor) {
  require(factor >= 1, "decimate: factor must be >= 1");
  const Index t_out = (data.cols() + factor - 1) / factor;
  Matrix out(data.rows(), t_out);
  for (Index i = 0; i < t_out; ++i) out.col(i) = data.col(i * factor);
  return out;
}

inline SubjectDataset decimate_subject(const SubjectDataset& subject, int factor) {
  SubjectDataset out = subject;
  for (auto& tr : out.trials) {
    tr.data = decimate(tr.data, factor);
    tr.sample_rate_hz = tr.sample_rate_hz / factor;
  }
  return out;
}

struct PreprocessConfig {
  BandpassSpec bandpass;  ///< sample_rate_hz filled from the data
  double screen_z_threshold = 5.0;
  int dss_n_keep = 7;
  double dss_rank_tolerance = 1e-10;
  bool apply_dss = true;
  int decimate_factor = 1;
};

struct PreprocessReport {
  ChannelScreenResult screen;
  DssModel dss;
  ZScoreStats zscore;
  double input_sample_rate_hz = 0.0;
  double output_sample_rate_hz = 0.0;
};

/// Full per-subject pipeline:
/// screen -> channel selection -> bandpass -> DSS denoise -> z-score ->
/// decimate. DSS is fit on the filtered (pre-z-score) data of this subject.
inline SubjectDataset run_preprocess(const SubjectDataset& subject,
                                     const PreprocessConfig& cfg,
                                     PreprocessReport* report = nullptr) {
  subject.validate();
  PreprocessReport rep;
  rep.input_sample_rate_hz = subject.sample_rate_hz();

  rep.screen = screen_bad_channels(subject, cfg.screen_z_threshold);
  SubjectDataset work = apply_channel_selection(subject, rep.screen.kept);

  BandpassSpec bp = cfg.bandpass;
  bp.sample_rate_hz = work.sample_rate_hz();
  work = filter_subject(work, design_bandpass(bp));

  if (cfg.apply_dss) {
    rep.dss = fit_dss(work, cfg.dss_n_keep, cfg.dss_rank_tolerance);
    for (auto& tr : work.trials) tr.data = apply_dss(rep.dss, tr.data);
  }

  work = zscore_channels(work, &rep.zscore);
  if (cfg.decimate_factor > 1) work = decimate_subject(work, cfg.decimate_factor);
  rep.output_sample_rate_hz = work.sample_rate_hz();
  if (report != nullptr) *report = std::move(rep);
  return work;
}

}  // namespace imago
