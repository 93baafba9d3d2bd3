#pragma once

// Core data model: stimuli, tasks, condition labels, trials, and per-subject
// datasets. A trial is a channels x samples matrix at a fixed sample rate.

#include "imago/common.hpp"

#include <array>
#include <string>
#include <vector>

namespace imago {

enum class Stimulus : int { Melody1 = 0, Melody2 = 1, Poem1 = 2, Poem2 = 3 };
enum class Task : int { Listen = 0, Imagine = 1 };

constexpr int kNumStimuli = 4;
constexpr int kNumConditions = 8;

inline const char* to_string(Stimulus s) {
  switch (s) {
    case Stimulus::Melody1: return "melody1";
    case Stimulus::Melody2: return "melody2";
    case Stimulus::Poem1: return "poem1";
    case Stimulus::Poem2: return "poem2";
  }
  throw ValidationError("bad stimulus value");
}

inline const char* to_string(Task t) {
  switch (t) {
    case Task::Listen: return "listen";
    case Task::Imagine: return "imagine";
  }
  throw ValidationError("bad task value");
}

inline Stimulus stimulus_from_string(const std::string& s) {
  for (int i = 0; i < kNumStimuli; ++i)
    if (s == to_string(static_cast<Stimulus>(i))) return static_cast<Stimulus>(i);
  throw ValidationError("unknown stimulus name: " + s);
}

inline Task task_from_string(const std::string& s) {
  if (s == "listen") return Task::Listen;
  if (s == "imagine") return Task::Imagine;
  throw ValidationError("unknown task name: " + s);
}

/// One of the 8 experimental conditions: (stimulus, task).
/// Conditions are ordered stimulus-major with listen before imagine, so
/// index = 2 * stimulus + task.
struct ConditionLabel {
  Stimulus stimulus = Stimulus::Melody1;
  Task task = Task::Listen;

  int index() const { return 2 * static_cast<int>(stimulus) + static_cast<int>(task); }

  static ConditionLabel from_index(int idx) {
    require(idx >= 0 && idx < kNumConditions, "condition index out of range");
    return {static_cast<Stimulus>(idx / 2), static_cast<Task>(idx % 2)};
  }

  std::string name() const {
    return std::string(to_string(stimulus)) + "_" + to_string(task);
  }

  static ConditionLabel parse(const std::string& s) {
    const auto pos = s.rfind('_');
    require(pos != std::string::npos, "bad condition name: " + s);
    return {stimulus_from_string(s.substr(0, pos)), task_from_string(s.substr(pos + 1))};
  }

  friend bool operator==(const ConditionLabel&, const ConditionLabel&) = default;
  friend auto operator<=>(const ConditionLabel& a, const ConditionLabel& b) {
    return a.index() <=> b.index();
  }
};

inline std::array<ConditionLabel, kNumConditions> all_conditions() {
  std::array<ConditionLabel, kNumConditions> out;
  for (int i = 0; i < kNumConditions; ++i) out[static_cast<std::size_t>(i)] = ConditionLabel::from_index(i);
  return out;
}

/// One recorded trial: C x T sample matrix plus identity metadata.
struct TrialRecord {
  std::string subject_id;
  ConditionLabel condition;
  int repetition = 0;  ///< 0-based within (subject, condition)
  double sample_rate_hz = 0.0;
  Matrix data;  ///< channels x samples

  Index channels() const { return data.rows(); }
  Index samples() const { return data.cols(); }

  void validate() const {
    require(!subject_id.empty(), "trial has empty subject_id");
    require(repetition >= 0, "trial repetition must be >= 0");
    require(sample_rate_hz > 0.0, "trial sample_rate_hz must be positive");
    require(data.rows() > 0 && data.cols() > 0, "trial data is empty");
    require(all_finite(data), "trial data contains non-finite values");
  }
};

/// All trials of one subject. Trials are kept sorted by (condition index,
/// repetition); every trial shares the channel count and sample rate.
struct SubjectDataset {
  std::string subject_id;
  std::vector<std::string> channel_names;
  std::vector<TrialRecord> trials;

  Index channels() const {
    return trials.empty() ? static_cast<Index>(channel_names.size()) : trials.front().channels();
  }
  double sample_rate_hz() const {
    return trials.empty() ? 0.0 : trials.front().sample_rate_hz;
  }

  std::vector<int> trial_indices(ConditionLabel c) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < trials.size(); ++i)
      if (trials[i].condition == c) out.push_back(static_cast<int>(i));
    return out;
  }

  std::vector<int> trial_indices(Task t) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < trials.size(); ++i)
      if (trials[i].condition.task == t) out.push_back(static_cast<int>(i));
    return out;
  }

  const TrialRecord* find_trial(ConditionLabel c, int repetition) const {
    for (const auto& tr : trials)
      if (tr.condition == c && tr.repetition == repetition) return &tr;
    return nullptr;
  }

  void sort_trials() {
    std::stable_sort(trials.begin(), trials.end(),
                     [](const TrialRecord& a, const TrialRecord& b) {
                       if (a.condition.index() != b.condition.index())
                         return a.condition.index() < b.condition.index();
                       return a.repetition < b.repetition;
                     });
  }

  void validate() const {
    require(!subject_id.empty(), "dataset has empty subject_id");
    require(!trials.empty(), "dataset has no trials");
    const Index c = trials.front().channels();
    const Index t = trials.front().samples();
    const double fs = trials.front().sample_rate_hz;
    require(static_cast<Index>(channel_names.size()) == c,
            "channel_names length does not match channel count");
    std::vector<std::pair<int, int>> keys;
    for (const auto& tr : trials) {
      tr.validate();
      require(tr.subject_id == subject_id, "trial subject_id mismatch inside dataset");
      require(tr.channels() == c, "trial channel count mismatch inside dataset");
      require(tr.samples() == t, "trial sample count mismatch inside dataset");
      require(tr.sample_rate_hz == fs, "trial sample rate mismatch inside dataset");
      keys.emplace_back(tr.condition.index(), tr.repetition);
    }
    std::sort(keys.begin(), keys.end());
    require(std::adjacent_find(keys.begin(), keys.end()) == keys.end(),
            "duplicate (condition, repetition) in dataset for subject " + subject_id);
  }
};

inline void validate_dataset(const std::vector<SubjectDataset>& subjects) {
  require(!subjects.empty(), "dataset has no subjects");
  std::vector<std::string> ids;
  for (const auto& s : subjects) {
    s.validate();
    ids.push_back(s.subject_id);
  }
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
          "duplicate subject_id in dataset");
}

}  // namespace imago
