#pragma once

// Imagined -> listened trial pairing. Every mapping analysis consumes pairs
// of (imagined trial, listened target). Targets are either the listened
// trial with the same repetition number or the average of all listened
// trials of the same stimulus.

#include "imago/common.hpp"
#include "imago/trial.hpp"

#include <string>
#include <vector>

namespace imago {

enum class PairingMode { PairedByRepetition, AveragedTarget };

inline const char* to_string(PairingMode m) {
  return m == PairingMode::PairedByRepetition ? "paired_by_repetition" : "averaged_target";
}

inline PairingMode pairing_mode_from_string(const std::string& s) {
  if (s == "paired_by_repetition") return PairingMode::PairedByRepetition;
  if (s == "averaged_target") return PairingMode::AveragedTarget;
  throw ValidationError("unknown pairing mode: " + s);
}

struct TrialPair {
  int imagined_index = -1;  ///< index into SubjectDataset::trials
  Stimulus stimulus = Stimulus::Melody1;
  int repetition = 0;  ///< repetition of the imagined trial
  Matrix target;       ///< listened target, C x T
};

struct TrialPairing {
  PairingMode mode = PairingMode::AveragedTarget;
  std::string subject_id;
  std::vector<TrialPair> pairs;  ///< ordered by (stimulus, repetition)
};

/// Builds the pairing for one subject. Each imagined trial appears exactly
/// once. Throws if an imagined trial's stimulus has no listened trials, or,
/// in PairedByRepetition mode, no listened trial with the same repetition.
inline TrialPairing build_pairing(const SubjectDataset& subject, PairingMode mode) {
  subject.validate();
  TrialPairing out;
  out.mode = mode;
  out.subject_id = subject.subject_id;

  for (std::size_t i = 0; i < subject.trials.size(); ++i) {
    const TrialRecord& tr = subject.trials[i];
    if (tr.condition.task != Task::Imagine) continue;
    TrialPair pair;
    pair.imagined_index = static_cast<int>(i);
    pair.stimulus = tr.condition.stimulus;
    pair.repetition = tr.repetition;
    const ConditionLabel listen_cond{tr.condition.stimulus, Task::Listen};
    if (mode == PairingMode::PairedByRepetition) {
      const TrialRecord* match = subject.find_trial(listen_cond, tr.repetition);
      require(match != nullptr,
              "no listened trial for subject " + subject.subject_id + ", stimulus " +
                  to_string(tr.condition.stimulus) + ", repetition " +
                  std::to_string(tr.repetition));
      pair.target = match->data;
    } else {
      const auto listened = subject.trial_indices(listen_cond);
      require(!listened.empty(), "no listened trials for subject " + subject.subject_id +
                                     ", stimulus " + to_string(tr.condition.stimulus));
      Matrix mean = Matrix::Zero(tr.channels(), tr.samples());
      for (int idx : listened) mean += subject.trials[static_cast<std::size_t>(idx)].data;
      mean /= static_cast<double>(listened.size());
      pair.target = std::move(mean);
    }
    out.pairs.push_back(std::move(pair));
  }
  require(!out.pairs.empty(), "subject " + subject.subject_id + " has no imagined trials");
  return out;
}

/// Reassigns targets across pairs: pair i keeps its imagined trial but
/// receives the target of pair perm[i]. Used by null models; the identity
/// permutation returns an equal pairing.
inline TrialPairing apply_target_permutation(const TrialPairing& pairing,
                                             const std::vector<int>& perm) {
  require(perm.size() == pairing.pairs.size(),
          "target permutation length does not match pair count");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    require(p >= 0 && static_cast<std::size_t>(p) < perm.size() && !seen[static_cast<std::size_t>(p)],
            "target permutation is not a permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  TrialPairing out = pairing;
  for (std::size_t i = 0; i < perm.size(); ++i)
    out.pairs[i].target = pairing.pairs[static_cast<std::size_t>(perm[i])].target;
  return out;
}

}  // namespace imago
