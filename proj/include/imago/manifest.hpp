#pragma once

// Run manifest: a JSON audit record kept at the root of an output directory.
// Every command appends one stage entry naming its parameters, seed, config
// hash, input fingerprint, and the fingerprint of every file it wrote. The
// manifest lets a rerun be checked for byte-identical outputs; timestamps
// live alongside the fingerprints but are never part of any hashed content
// (the manifest file itself is excluded from directory fingerprints).

#include <imago/common.hpp>
#include <imago/dataset_io.hpp>

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace imago {

inline constexpr const char* kToolVersion = "imago 1.0.0";
inline constexpr const char* kRunManifestName = "run_manifest.json";

/// One pipeline stage's audit record.
struct StageRecord {
  std::string name;                    ///< subcommand name
  Json parameters;                     ///< stage parameters (JSON object)
  std::string config_hash;             ///< hash of the full experiment config
  std::uint64_t seed = 0;              ///< seed the stage ran with
  std::string input_fingerprint;       ///< fingerprint of consumed inputs ("" if none)
  std::vector<std::pair<std::string, std::string>> outputs;  ///< (file, fingerprint)
  std::string timestamp;               ///< ISO-8601 UTC, informational only
};

struct RunManifest {
  std::vector<StageRecord> stages;
};

namespace detail {

inline std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

}  // namespace detail

inline Json to_json(const StageRecord& stage) {
  Json outputs = Json::array();
  for (const auto& [file, fp] : stage.outputs)
    outputs.push_back({{"file", file}, {"fingerprint", fp}});
  return Json{{"name", stage.name},
              {"parameters", stage.parameters},
              {"config_hash", stage.config_hash},
              {"seed", stage.seed},
              {"input_fingerprint", stage.input_fingerprint},
              {"outputs", outputs},
              {"timestamp", stage.timestamp},
              {"tool_version", kToolVersion}};
}

inline StageRecord stage_from_json(const Json& j) {
  StageRecord stage;
  stage.name = j.at("name").get<std::string>();
  stage.parameters = j.at("parameters");
  stage.config_hash = j.at("config_hash").get<std::string>();
  stage.seed = j.at("seed").get<std::uint64_t>();
  stage.input_fingerprint = j.at("input_fingerprint").get<std::string>();
  for (const auto& o : j.at("outputs"))
    stage.outputs.emplace_back(o.at("file").get<std::string>(),
                               o.at("fingerprint").get<std::string>());
  stage.timestamp = j.value("timestamp", "");
  return stage;
}

/// Loads the manifest in `dir`, or an empty one if none exists yet.
inline RunManifest load_run_manifest(const fs::path& dir) {
  RunManifest manifest;
  const fs::path path = dir / kRunManifestName;
  if (!fs::exists(path)) return manifest;
  Json j;
  try {
    j = Json::parse(detail::read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError("malformed " + path.string() + ": " + std::string(e.what()));
  }
  require(j.value("format", "") == "imago-run-v1",
          "unsupported run manifest format in " + path.string());
  for (const auto& s : j.at("stages")) manifest.stages.push_back(stage_from_json(s));
  return manifest;
}

inline void save_run_manifest(const fs::path& dir, const RunManifest& manifest) {
  Json j;
  j["format"] = "imago-run-v1";
  j["tool_version"] = kToolVersion;
  Json stages = Json::array();
  for (const auto& s : manifest.stages) stages.push_back(to_json(s));
  j["stages"] = stages;
  fs::create_directories(dir);
  detail::write_text_file(dir / kRunManifestName, j.dump(2) + "\n");
}

/// Fingerprints one file for a stage's output inventory.
inline std::string file_fingerprint(const fs::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  Fnv1a64 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

/// Appends a completed stage entry (fingerprinting `output_files`, which are
/// relative to `dir`) and rewrites the manifest.
inline StageRecord record_stage(const fs::path& dir, const std::string& name,
                                const Json& parameters, const std::string& config_hash,
                                std::uint64_t seed, const std::string& input_fingerprint,
                                const std::vector<std::string>& output_files) {
  StageRecord stage;
  stage.name = name;
  stage.parameters = parameters;
  stage.config_hash = config_hash;
  stage.seed = seed;
  stage.input_fingerprint = input_fingerprint;
  stage.timestamp = detail::utc_timestamp_now();
  for (const auto& file : output_files)
    stage.outputs.emplace_back(file, file_fingerprint(dir / file));

  RunManifest manifest = load_run_manifest(dir);
  manifest.stages.push_back(stage);
  save_run_manifest(dir, manifest);
  return stage;
}

/// All files named by any stage of the manifest (for completeness checks).
inline std::vector<std::string> manifest_file_inventory(const RunManifest& manifest) {
  std::vector<std::string> files;
  for (const auto& stage : manifest.stages)
    for (const auto& [file, fp] : stage.outputs) files.push_back(file);
  return files;
}

}  // namespace imago
