#pragma once

// Ground truth serialization: ground_truth.json plus raw float64
// little-endian sidecar files (row-major) for each matrix. Round-trips are
// bit-exact.

#include "imago/common.hpp"
#include "imago/dataset_io.hpp"
#include "imago/synth.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace imago {

namespace detail {

inline void write_matrix_f64(const fs::path& path, const Matrix& m) {
  std::vector<double> buf(static_cast<std::size_t>(m.size()));
  std::size_t i = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) buf[i++] = m(r, c);
  write_file_bytes(path, buf.data(), buf.size() * sizeof(double));
}

inline Matrix read_matrix_f64(const fs::path& path, Index rows, Index cols) {
  const auto bytes = read_file_bytes(path);
  const std::size_t expected =
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * sizeof(double);
  require(bytes.size() == expected, "ground truth sidecar size mismatch: " + path.string());
  Matrix m(rows, cols);
  const char* p = bytes.data();
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      double v;
      std::memcpy(&v, p, sizeof v);
      p += sizeof v;
      m(r, c) = v;
    }
  return m;
}

inline Json matrix_entry(const fs::path& dir, const std::string& file, const Matrix& m) {
  write_matrix_f64(dir / file, m);
  return Json{{"file", file}, {"rows", m.rows()}, {"cols", m.cols()}};
}

}  // namespace detail

inline void save_ground_truth(const fs::path& dir, const GroundTruth& gt) {
  fs::create_directories(dir);
  Json j;
  j["format"] = "imago-ground-truth-v1";

  Json latents = Json::object();
  for (int s = 0; s < kNumStimuli; ++s)
    latents[to_string(static_cast<Stimulus>(s))] = detail::matrix_entry(
        dir, std::string("gt_latent_") + to_string(static_cast<Stimulus>(s)) + ".f64",
        gt.latent_sources[static_cast<std::size_t>(s)]);
  j["latent_sources"] = latents;

  Json mixing = Json::object();
  Json noise = Json::object();
  Json jitter = Json::object();
  for (std::size_t i = 0; i < gt.subject_ids.size(); ++i) {
    const std::string& id = gt.subject_ids[i];
    mixing[id] = detail::matrix_entry(dir, "gt_mixing_" + id + ".f64", gt.subject_mixing[i]);
    noise[id] = detail::matrix_entry(dir, "gt_noisemix_" + id + ".f64", gt.noise_mixing[i]);
    Json per_stim = Json::object();
    for (int s = 0; s < kNumStimuli; ++s)
      per_stim[to_string(static_cast<Stimulus>(s))] =
          gt.jitter_samples[i][static_cast<std::size_t>(s)];
    jitter[id] = per_stim;
  }
  j["subject_mixing"] = mixing;
  j["noise_mixing"] = noise;
  j["jitter_samples"] = jitter;

  Json kernel = Json::array();
  for (Index i = 0; i < gt.imagery_kernel.size(); ++i) kernel.push_back(gt.imagery_kernel[i]);
  j["imagery_kernel"] = kernel;
  j["subject_ids"] = gt.subject_ids;

  detail::write_text_file(dir / "ground_truth.json", j.dump(2) + "\n");
}

inline GroundTruth load_ground_truth(const fs::path& dir) {
  const fs::path jpath = dir / "ground_truth.json";
  require(fs::exists(jpath), "missing ground_truth.json in " + dir.string());
  Json j;
  try {
    j = Json::parse(detail::read_text_file(jpath));
  } catch (const Json::parse_error& e) {
    throw ValidationError("malformed ground_truth.json: " + std::string(e.what()));
  }
  require(j.value("format", "") == "imago-ground-truth-v1",
          "unsupported ground truth format in " + jpath.string());

  GroundTruth gt;
  gt.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();

  const auto read_entry = [&](const Json& e) {
    return detail::read_matrix_f64(dir / e.at("file").get<std::string>(),
                                   e.at("rows").get<Index>(), e.at("cols").get<Index>());
  };
  for (int s = 0; s < kNumStimuli; ++s)
    gt.latent_sources.push_back(
        read_entry(j.at("latent_sources").at(to_string(static_cast<Stimulus>(s)))));
  for (const std::string& id : gt.subject_ids) {
    gt.subject_mixing.push_back(read_entry(j.at("subject_mixing").at(id)));
    gt.noise_mixing.push_back(read_entry(j.at("noise_mixing").at(id)));
    std::vector<std::vector<int>> per_subject;
    for (int s = 0; s < kNumStimuli; ++s)
      per_subject.push_back(j.at("jitter_samples")
                                .at(id)
                                .at(to_string(static_cast<Stimulus>(s)))
                                .get<std::vector<int>>());
    gt.jitter_samples.push_back(std::move(per_subject));
  }
  const auto kernel = j.at("imagery_kernel").get<std::vector<double>>();
  gt.imagery_kernel = Eigen::Map<const Vector>(kernel.data(), static_cast<Index>(kernel.size()));
  return gt;
}

}  // namespace imago
