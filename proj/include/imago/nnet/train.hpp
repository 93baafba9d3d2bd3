#pragma once

// Training protocol for the encoder-decoder: stratified train/validation
// split, Adam with early stopping, frozen-backbone calibration fitting, and
// the leave-one-subject-out evaluation with its matched-seed null pipeline
// (pairing targets shuffled and imagined-channel assignments permuted).

#include <imago/common.hpp>
#include <imago/nnet/adam.hpp>
#include <imago/nnet/losses.hpp>
#include <imago/nnet/model.hpp>
#include <imago/pairing.hpp>
#include <imago/rng.hpp>
#include <imago/stats.hpp>
#include <imago/synth.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace imago::nnet {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 500;
  int patience = 10;
  int batch_size = 8;
  double val_fraction = 0.2;
  double calibration_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    require(learning_rate > 0.0, "train: learning rate must be positive");
    require(max_epochs >= 1, "train: max_epochs must be positive");
    require(patience >= 1, "train: patience must be >= 1");
    require(batch_size >= 1, "train: batch_size must be positive");
    require(val_fraction > 0.0 && val_fraction < 1.0, "train: val_fraction must be in (0, 1)");
    require(calibration_fraction > 0.0 && calibration_fraction < 1.0,
            "train: calibration_fraction must be in (0, 1)");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.learning_rate = learning_rate;
    a.beta1 = beta1;
    a.beta2 = beta2;
    a.eps = adam_eps;
    return a;
  }
};

struct TrainLog {
  struct Epoch {
    LossTerms train;
    LossTerms val;
  };
  std::vector<Epoch> epochs;
  int best_epoch = -1;  ///< 0-based index of the epoch whose weights were kept
};

// ---------------------------------------------------------------------------
// Null universe: per-subject permutations applied to the whole pipeline.

/// Per-subject permutations defining the null universe: `channel_perm`
/// relabels the channels of every imagined trial (destroying the input-side
/// channel assignment), `pair_perm` shuffles the pairing's listened targets.
struct NullPlan {
  struct SubjectPlan {
    std::vector<int> channel_perm;
    std::vector<int> pair_perm;
  };
  std::map<std::string, SubjectPlan> by_subject;  ///< keyed by subject_id
};

/// Seeded null plan over all subjects.
inline NullPlan make_null_plan(const std::vector<SubjectDataset>& subjects, PairingMode mode,
                               std::uint64_t seed) {
  NullPlan plan;
  for (const SubjectDataset& subject : subjects) {
    NullPlan::SubjectPlan sp;
    Rng chan_rng(derive_seed(seed, "null-chan", subject.subject_id));
    sp.channel_perm = chan_rng.permutation(static_cast<int>(subject.channels()));
    Rng pair_rng(derive_seed(seed, "null-pair", subject.subject_id));
    sp.pair_perm =
        pair_rng.permutation(static_cast<int>(build_pairing(subject, mode).pairs.size()));
    plan.by_subject[subject.subject_id] = std::move(sp);
  }
  return plan;
}

/// Identity plan: applying it reproduces the true pipeline exactly.
inline NullPlan identity_null_plan(const std::vector<SubjectDataset>& subjects,
                                   PairingMode mode) {
  NullPlan plan;
  for (const SubjectDataset& subject : subjects) {
    NullPlan::SubjectPlan sp;
    sp.channel_perm.resize(static_cast<std::size_t>(subject.channels()));
    for (std::size_t i = 0; i < sp.channel_perm.size(); ++i)
      sp.channel_perm[i] = static_cast<int>(i);
    const int n = static_cast<int>(build_pairing(subject, mode).pairs.size());
    sp.pair_perm.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) sp.pair_perm[static_cast<std::size_t>(i)] = i;
    plan.by_subject[subject.subject_id] = std::move(sp);
  }
  return plan;
}

/// Applies the channel relabeling to every imagined trial of each subject;
/// listened trials are left untouched.
inline std::vector<SubjectDataset> apply_channel_plan(const std::vector<SubjectDataset>& subjects,
                                                      const NullPlan& plan) {
  std::vector<SubjectDataset> out = subjects;
  for (SubjectDataset& subject : out) {
    const auto it = plan.by_subject.find(subject.subject_id);
    require(it != plan.by_subject.end(), "null plan: missing subject");
    const std::vector<int>& perm = it->second.channel_perm;
    require(static_cast<Index>(perm.size()) == subject.channels(),
            "null plan: channel permutation length mismatch");
    for (TrialRecord& trial : subject.trials) {
      if (trial.condition.task != Task::Imagine) continue;
      Matrix permuted(trial.data.rows(), trial.data.cols());
      for (std::size_t r = 0; r < perm.size(); ++r)
        permuted.row(static_cast<Index>(r)) = trial.data.row(perm[r]);
      trial.data = std::move(permuted);
    }
  }
  return out;
}

/// Builds the subject's pairing, shuffling its targets when a plan is given.
inline TrialPairing plan_pairing(const SubjectDataset& subject, PairingMode mode,
                                 const NullPlan* plan) {
  TrialPairing pairing = build_pairing(subject, mode);
  if (plan == nullptr) return pairing;
  const auto it = plan->by_subject.find(subject.subject_id);
  require(it != plan->by_subject.end(), "null plan: missing subject");
  return apply_target_permutation(pairing, it->second.pair_perm);
}

// ---------------------------------------------------------------------------
// Backbone training.

namespace detail {

struct TrainSample {
  Matrix x;  ///< imagined trial, channels x time
  Matrix y;  ///< paired listened target
};

/// Collects (imagined, target) samples from every subject under the pairing
/// mode (targets shuffled when a plan is given), keyed by (subject, stimulus)
/// stratum.
inline std::map<std::pair<std::string, int>, std::vector<TrainSample>> collect_strata(
    const std::vector<SubjectDataset>& subjects, PairingMode mode, const NullPlan* plan) {
  std::map<std::pair<std::string, int>, std::vector<TrainSample>> strata;
  for (const SubjectDataset& subject : subjects) {
    const TrialPairing pairing = plan_pairing(subject, mode, plan);
    for (const TrialPair& pair : pairing.pairs) {
      TrainSample s;
      s.x = subject.trials[static_cast<std::size_t>(pair.imagined_index)].data;
      s.y = pair.target;
      strata[{subject.subject_id, static_cast<int>(pair.stimulus)}].push_back(std::move(s));
    }
  }
  return strata;
}

/// Stratified split: per stratum, a seeded shuffle sends round(frac * n)
/// samples (clamped so both sides stay non-empty) to `second`.
inline void stratified_split(
    std::map<std::pair<std::string, int>, std::vector<TrainSample>>& strata, double frac,
    Rng& rng, std::vector<TrainSample>* first, std::vector<TrainSample>* second) {
  for (auto& [key, samples] : strata) {
    const int n = static_cast<int>(samples.size());
    require(n >= 2, "train: a (subject, stimulus) stratum has fewer than 2 trial pairs");
    const std::vector<int> order = rng.permutation(n);
    int take = static_cast<int>(std::llround(frac * n));
    take = std::clamp(take, 1, n - 1);
    for (int i = 0; i < n; ++i) {
      TrainSample& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      (i < take ? second : first)->push_back(std::move(s));
    }
  }
}

inline void accumulate(LossTerms* sum, const LossTerms& t) {
  sum->mse += t.mse;
  sum->corr += t.corr;
  sum->temp += t.temp;
  sum->spec += t.spec;
  sum->total += t.total;
}

/// Sum of losses over samples in evaluation mode, batched.
inline LossTerms evaluate_loss(const EncoderDecoder& model,
                               const std::vector<TrainSample>& samples, int batch_size,
                               const LossWeights& weights) {
  LossTerms sum;
  Rng unused(0);
  for (std::size_t at = 0; at < samples.size();) {
    Tensor3 x, y;
    for (int b = 0; b < batch_size && at < samples.size(); ++b, ++at) {
      x.values.push_back(samples[at].x);
      y.values.push_back(samples[at].y);
    }
    accumulate(&sum, loss_terms(model.forward(x, false, unused), y, weights));
  }
  return sum;
}

}  // namespace detail

/// Trains the shared backbone on the given subjects: stratified 80-20
/// train/validation split at the trial-pair level, Adam, early stopping on
/// validation total loss, best-validation weights returned alongside the
/// per-epoch loss log.
inline std::pair<EncoderDecoder, TrainLog> train_backbone(
    const std::vector<SubjectDataset>& train_subjects, PairingMode mode,
    const ModelConfig& arch, const TrainConfig& config, const LossWeights& weights,
    const NullPlan* plan = nullptr) {
  config.validate();
  weights.validate();
  arch.validate();
  require(train_subjects.size() >= 2, "train: need at least 2 training subjects");
  for (const SubjectDataset& s : train_subjects)
    require(s.channels() == arch.channels, "train: subject channel count mismatch");

  auto strata = detail::collect_strata(train_subjects, mode, plan);
  std::vector<detail::TrainSample> train_set, val_set;
  Rng split_rng(derive_seed(config.seed, "split"));
  detail::stratified_split(strata, config.val_fraction, split_rng, &train_set, &val_set);

  Rng init_rng(derive_seed(config.seed, "init"));
  EncoderDecoder model(arch, init_rng);
  Adam opt(model.parameters(), config.adam());
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  TrainLog log;
  EncoderDecoder best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng order_rng(derive_seed(config.seed, "order", epoch));
    const std::vector<int> order = order_rng.permutation(static_cast<int>(train_set.size()));

    LossTerms train_sum;
    for (std::size_t at = 0; at < order.size();) {
      Tensor3 x, y;
      for (int b = 0; b < config.batch_size && at < order.size(); ++b, ++at) {
        const detail::TrainSample& s = train_set[static_cast<std::size_t>(order[at])];
        x.values.push_back(s.x);
        y.values.push_back(s.y);
      }
      EncoderDecoder::Workspace ws;
      const Tensor3 pred = model.forward(x, true, dropout_rng, &ws);
      Tensor3 grad;
      detail::accumulate(&train_sum, loss_with_grad(pred, y, weights, &grad));
      model.zero_grad();
      model.backward(ws, grad);
      opt.step();
    }

    TrainLog::Epoch entry;
    entry.train = train_sum;
    entry.val = detail::evaluate_loss(model, val_set, config.batch_size, weights);
    log.epochs.push_back(entry);

    if (entry.val.total < best_val) {
      best_val = entry.val.total;
      best = model;
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return {std::move(best), std::move(log)};
}

// ---------------------------------------------------------------------------
// Calibration fitting (backbone frozen).

struct CalibrationFit {
  CalibrationLayer layer;
  std::vector<int> calibration_pairs;  ///< pair indices used for fitting
  std::vector<int> evaluation_pairs;   ///< disjoint remainder, for evaluation
  std::vector<double> loss_curve;      ///< calibration-subset total loss per epoch
};

/// Splits the pairing's indices into calibration/evaluation subsets and fits
/// only the input-side calibration layer (backbone frozen, evaluation mode)
/// with Adam and plateau early stopping on the calibration-subset loss.
inline CalibrationFit fit_calibration(EncoderDecoder& backbone, const SubjectDataset& held_out,
                                      const TrialPairing& pairing, const TrainConfig& config,
                                      const LossWeights& weights) {
  config.validate();
  weights.validate();
  require(held_out.channels() == backbone.config().channels,
          "calibration: subject channel count mismatch");
  const int n = static_cast<int>(pairing.pairs.size());
  require(n >= 2, "calibration: need at least 2 pairs");

  CalibrationFit fit;
  Rng split_rng(derive_seed(config.seed, "calibration-split"));
  const std::vector<int> order = split_rng.permutation(n);
  int n_cal = static_cast<int>(std::llround(config.calibration_fraction * n));
  n_cal = std::clamp(n_cal, 1, n - 1);
  for (int i = 0; i < n; ++i)
    (i < n_cal ? fit.calibration_pairs : fit.evaluation_pairs)
        .push_back(order[static_cast<std::size_t>(i)]);
  require(!fit.evaluation_pairs.empty(),
          "calibration: calibration fraction leaves no evaluation pairs");
  std::sort(fit.calibration_pairs.begin(), fit.calibration_pairs.end());
  std::sort(fit.evaluation_pairs.begin(), fit.evaluation_pairs.end());

  Tensor3 x, y;
  for (int idx : fit.calibration_pairs) {
    const TrialPair& pair = pairing.pairs[static_cast<std::size_t>(idx)];
    x.values.push_back(held_out.trials[static_cast<std::size_t>(pair.imagined_index)].data);
    y.values.push_back(pair.target);
  }

  fit.layer = CalibrationLayer(backbone.config().channels);
  Adam opt(fit.layer.parameters(), config.adam());
  Rng unused(0);

  double best = std::numeric_limits<double>::infinity();
  CalibrationLayer best_layer = fit.layer;
  int since_best = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const Tensor3 mixed = fit.layer.forward(x);
    EncoderDecoder::Workspace ws;
    const Tensor3 pred = backbone.forward(mixed, false, unused, &ws);
    Tensor3 grad;
    const LossTerms t = loss_with_grad(pred, y, weights, &grad);
    fit.loss_curve.push_back(t.total);

    if (t.total < best) {
      best = t.total;
      best_layer = fit.layer;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }

    backbone.zero_grad();  // grads accumulate but are never stepped: backbone stays frozen
    const Tensor3 dmixed = backbone.backward(ws, grad);
    fit.layer.zero_grad();
    fit.layer.backward(x, dmixed);
    opt.step();
  }
  fit.layer = best_layer;
  return fit;
}

/// Convenience overload building the subject's true pairing.
inline CalibrationFit fit_calibration(EncoderDecoder& backbone, const SubjectDataset& held_out,
                                      PairingMode mode, const TrainConfig& config,
                                      const LossWeights& weights) {
  return fit_calibration(backbone, held_out, build_pairing(held_out, mode), config, weights);
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out evaluation.

struct LosoReport {
  stats::EvalReport group;             ///< per-subject r/z, means, SEMs, Wilcoxon p
  std::vector<int> best_epoch_true;    ///< per-fold best backbone epoch, true universe
  std::vector<int> best_epoch_null;    ///< per-fold best backbone epoch, null universe
};

namespace detail {

/// Mean per-channel correlation between predictions and targets over the
/// fold's evaluation pairs.
inline double evaluate_fold(EncoderDecoder& backbone, const CalibrationFit& fit,
                            const SubjectDataset& held_out, const TrialPairing& pairing) {
  Rng unused(0);
  std::vector<double> rs;
  for (int idx : fit.evaluation_pairs) {
    const TrialPair& pair = pairing.pairs[static_cast<std::size_t>(idx)];
    Tensor3 x;
    x.values.push_back(held_out.trials[static_cast<std::size_t>(pair.imagined_index)].data);
    const Tensor3 pred = backbone.forward(fit.layer.forward(x), false, unused);
    const Matrix& p = pred.values[0];
    for (Index ch = 0; ch < p.rows(); ++ch) {
      const auto r = stats::pearson_r_or_null(Vector(p.row(ch).transpose()),
                                              Vector(pair.target.row(ch).transpose()));
      if (r) rs.push_back(*r);
    }
  }
  require(!rs.empty(), "loso: no valid evaluation correlations");
  double sum = 0.0;
  for (double r : rs) sum += r;
  return sum / static_cast<double>(rs.size());
}

/// One LOSO pass over a universe (true: plan == nullptr; null: channel plan
/// already applied to `subjects`, pairing permutations threaded via `plan`).
/// Returns per-fold (mean r, best training epoch).
inline std::vector<std::pair<double, int>> loso_pass(const std::vector<SubjectDataset>& subjects,
                                                     PairingMode mode, const ModelConfig& arch,
                                                     const TrainConfig& config,
                                                     const LossWeights& weights,
                                                     const NullPlan* plan) {
  std::vector<std::pair<double, int>> results;
  for (std::size_t held = 0; held < subjects.size(); ++held) {
    std::vector<SubjectDataset> train_subjects;
    for (std::size_t s = 0; s < subjects.size(); ++s)
      if (s != held) train_subjects.push_back(subjects[s]);

    TrainConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, "fold", static_cast<int>(held));

    auto [backbone, log] = train_backbone(train_subjects, mode, arch, fold_config, weights, plan);
    const TrialPairing pairing = plan_pairing(subjects[held], mode, plan);
    const CalibrationFit fit =
        fit_calibration(backbone, subjects[held], pairing, fold_config, weights);
    results.push_back({evaluate_fold(backbone, fit, subjects[held], pairing), log.best_epoch});
  }
  return results;
}

}  // namespace detail

/// Leave-one-subject-out evaluation: for every held-out subject, trains the
/// backbone on the rest, fits calibration on a subset of the held-out pairs,
/// and scores mean prediction correlation on the disjoint remainder; then
/// repeats the identical pipeline with matched seeds in the null universe
/// (per-subject seeded shuffles of pairing targets and imagined-channel
/// assignments). Pass an identity plan to make the null equal the true run.
inline LosoReport evaluate_loso(const std::vector<SubjectDataset>& subjects, PairingMode mode,
                                const ModelConfig& arch, const TrainConfig& config,
                                const LossWeights& weights,
                                const NullPlan* plan_override = nullptr) {
  require(subjects.size() >= 3, "loso: need at least 3 subjects");
  const NullPlan plan = plan_override != nullptr
                            ? *plan_override
                            : make_null_plan(subjects, mode, derive_seed(config.seed, "null"));

  const auto true_results = detail::loso_pass(subjects, mode, arch, config, weights, nullptr);
  const std::vector<SubjectDataset> null_subjects = apply_channel_plan(subjects, plan);
  const auto null_results = detail::loso_pass(null_subjects, mode, arch, config, weights, &plan);

  LosoReport report;
  std::vector<std::string> ids;
  std::vector<double> r_true, r_null;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    ids.push_back(subjects[s].subject_id);
    r_true.push_back(true_results[s].first);
    r_null.push_back(null_results[s].first);
    report.best_epoch_true.push_back(true_results[s].second);
    report.best_epoch_null.push_back(null_results[s].second);
  }
  report.group = stats::build_eval_report(ids, r_true, r_null);
  return report;
}

}  // namespace imago::nnet
