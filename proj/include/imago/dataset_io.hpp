#pragma once

// Dataset directory format.
//
// A dataset directory holds one manifest.json plus one raw sample file per
// trial. The manifest records, per trial: subject, stimulus, task,
// repetition, sample rate, shape, and file name. Sample files are float32
// little-endian, channel-major (all samples of channel 0, then channel 1,
// ...). Values are quantized to float32 on save; save -> load is the
// identity on float32-representable data, and two saves of the same dataset
// are byte-identical.

#include "imago/common.hpp"
#include "imago/trial.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace imago {

namespace fs = std::filesystem;
using Json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "raw sample files are little-endian; add byte swapping for this platform");

namespace detail {

inline std::string trial_file_name(const TrialRecord& tr) {
  char rep[8];
  std::snprintf(rep, sizeof rep, "r%02d", tr.repetition);
  return tr.subject_id + "_" + tr.condition.name() + "_" + rep + ".f32";
}

inline void write_file_bytes(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw RuntimeError("short write: " + path.string());
}

inline std::vector<char> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(size));
  in.read(buf.data(), size);
  if (!in) throw RuntimeError("short read: " + path.string());
  return buf;
}

inline std::string read_text_file(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  write_file_bytes(path, text.data(), text.size());
}

}  // namespace detail

/// Writes a C x T matrix as float32 little-endian, channel-major.
inline void save_trial_samples(const fs::path& path, const Matrix& data) {
  std::vector<float> buf(static_cast<std::size_t>(data.size()));
  std::size_t i = 0;
  for (Index c = 0; c < data.rows(); ++c)
    for (Index t = 0; t < data.cols(); ++t) buf[i++] = static_cast<float>(data(c, t));
  detail::write_file_bytes(path, buf.data(), buf.size() * sizeof(float));
}

inline Matrix load_trial_samples(const fs::path& path, Index channels, Index samples) {
  const auto bytes = detail::read_file_bytes(path);
  const std::size_t expected =
      static_cast<std::size_t>(channels) * static_cast<std::size_t>(samples) * sizeof(float);
  require(bytes.size() == expected,
          "sample file size mismatch for " + path.string() + ": expected " +
              std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
  Matrix data(channels, samples);
  const char* p = bytes.data();
  for (Index c = 0; c < channels; ++c)
    for (Index t = 0; t < samples; ++t) {
      float v;
      std::memcpy(&v, p, sizeof v);
      p += sizeof v;
      data(c, t) = static_cast<double>(v);
    }
  require(all_finite(data), "non-finite sample values in " + path.string());
  return data;
}

/// Saves all subjects into `dir` (created if needed): manifest.json plus one
/// .f32 file per trial. Existing trial/manifest files are overwritten.
inline void save_dataset(const fs::path& dir, const std::vector<SubjectDataset>& subjects) {
  validate_dataset(subjects);
  fs::create_directories(dir);

  Json manifest;
  manifest["format"] = "imago-dataset-v1";
  Json subj_list = Json::array();
  Json trial_list = Json::array();

  std::vector<const SubjectDataset*> order;
  for (const auto& s : subjects) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const SubjectDataset* a, const SubjectDataset* b) {
              return a->subject_id < b->subject_id;
            });

  for (const SubjectDataset* s : order) {
    subj_list.push_back({{"subject_id", s->subject_id},
                         {"channel_names", s->channel_names}});
    std::vector<const TrialRecord*> trs;
    for (const auto& tr : s->trials) trs.push_back(&tr);
    std::sort(trs.begin(), trs.end(), [](const TrialRecord* a, const TrialRecord* b) {
      if (a->condition.index() != b->condition.index())
        return a->condition.index() < b->condition.index();
      return a->repetition < b->repetition;
    });
    for (const TrialRecord* tr : trs) {
      const std::string fname = detail::trial_file_name(*tr);
      save_trial_samples(dir / fname, tr->data);
      trial_list.push_back({{"subject_id", tr->subject_id},
                            {"stimulus", to_string(tr->condition.stimulus)},
                            {"task", to_string(tr->condition.task)},
                            {"repetition", tr->repetition},
                            {"sample_rate_hz", tr->sample_rate_hz},
                            {"channels", tr->channels()},
                            {"samples", tr->samples()},
                            {"file", fname}});
    }
  }
  manifest["subjects"] = subj_list;
  manifest["trials"] = trial_list;
  detail::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a dataset directory written by save_dataset. Subjects come back
/// sorted by id, trials by (condition, repetition). Throws ValidationError
/// on a missing manifest, shape mismatches, duplicate trials, or non-finite
/// values.
inline std::vector<SubjectDataset> load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  require(fs::exists(mpath), "missing manifest.json in " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(detail::read_text_file(mpath));
  } catch (const Json::parse_error& e) {
    throw ValidationError("malformed manifest.json: " + std::string(e.what()));
  }
  require(manifest.value("format", "") == "imago-dataset-v1",
          "unsupported dataset format in " + mpath.string());

  std::map<std::string, SubjectDataset> by_id;
  for (const auto& s : manifest.at("subjects")) {
    SubjectDataset ds;
    ds.subject_id = s.at("subject_id").get<std::string>();
    ds.channel_names = s.at("channel_names").get<std::vector<std::string>>();
    require(!by_id.contains(ds.subject_id), "duplicate subject in manifest: " + ds.subject_id);
    by_id[ds.subject_id] = std::move(ds);
  }

  for (const auto& t : manifest.at("trials")) {
    TrialRecord tr;
    tr.subject_id = t.at("subject_id").get<std::string>();
    tr.condition.stimulus = stimulus_from_string(t.at("stimulus").get<std::string>());
    tr.condition.task = task_from_string(t.at("task").get<std::string>());
    tr.repetition = t.at("repetition").get<int>();
    tr.sample_rate_hz = t.at("sample_rate_hz").get<double>();
    const auto channels = t.at("channels").get<Index>();
    const auto samples = t.at("samples").get<Index>();
    const auto fname = t.at("file").get<std::string>();
    auto it = by_id.find(tr.subject_id);
    require(it != by_id.end(), "trial references unknown subject: " + tr.subject_id);
    tr.data = load_trial_samples(dir / fname, channels, samples);
    it->second.trials.push_back(std::move(tr));
  }

  std::vector<SubjectDataset> out;
  for (auto& [id, ds] : by_id) {
    ds.sort_trials();
    out.push_back(std::move(ds));
  }
  validate_dataset(out);
  return out;
}

/// FNV-1a fingerprint over every regular file in a directory tree (sorted
/// relative paths, then contents). Names the whole directory's content.
inline std::string directory_fingerprint(const fs::path& dir,
                                         const std::vector<std::string>& exclude = {}) {
  require(fs::exists(dir), "no such directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir));
  std::sort(files.begin(), files.end());
  Fnv1a64 h;
  for (const auto& rel : files) {
    if (std::find(exclude.begin(), exclude.end(), rel.string()) != exclude.end()) continue;
    h.update(rel.string());
    h.update("\0", 1);
    const auto bytes = detail::read_file_bytes(dir / rel);
    h.update(bytes.data(), bytes.size());
    h.update("\0", 1);
  }
  return h.hex();
}

}  // namespace imago
