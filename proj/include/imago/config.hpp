#pragma once

// Experiment configuration: a small INI dialect (`[section]` headers and
// `key = value` lines, `#`/`;` comments) parsed into the typed configuration
// structs of the pipeline stages. Unknown sections or keys are rejected so a
// typo cannot silently fall back to a default. `canonical_text()` serializes
// every effective value (defaults included) in a fixed order, which both
// documents the defaults and gives `config_hash()` a stable basis.

#include <imago/common.hpp>
#include <imago/nnet/losses.hpp>
#include <imago/nnet/model.hpp>
#include <imago/nnet/train.hpp>
#include <imago/pairing.hpp>
#include <imago/preprocess.hpp>
#include <imago/ridge.hpp>
#include <imago/synth.hpp>

#include <charconv>
#include <climits>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace imago {

// ---------------------------------------------------------------------------
// Low-level INI document.

struct IniDocument {
  // section -> key -> value, with insertion order preserved separately so
  // error messages can reference the original layout.
  std::map<std::string, std::map<std::string, std::string>> sections;
};

namespace detail {

inline std::string strip(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Parses the INI dialect. Keys outside any section, malformed lines,
/// duplicate keys within a section, and malformed headers all throw.
inline IniDocument parse_ini(const std::string& text) {
  IniDocument doc;
  std::string section;
  bool in_section = false;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::strip(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      require(line.back() == ']' && line.size() >= 3,
              "config line " + std::to_string(line_no) + ": malformed section header '" + line +
                  "'");
      section = detail::strip(std::string_view(line).substr(1, line.size() - 2));
      require(!section.empty(), "config line " + std::to_string(line_no) + ": empty section name");
      in_section = true;
      doc.sections[section];  // present even if empty
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(line_no) + ": expected 'key = value', got '" + line +
                "'");
    require(in_section, "config line " + std::to_string(line_no) + ": key outside any [section]");
    const std::string key = detail::strip(std::string_view(line).substr(0, eq));
    const std::string value = detail::strip(std::string_view(line).substr(eq + 1));
    require(!key.empty(), "config line " + std::to_string(line_no) + ": empty key");
    auto& sec = doc.sections[section];
    require(!sec.contains(key), "config line " + std::to_string(line_no) + ": duplicate key '" +
                                    key + "' in [" + section + "]");
    sec[key] = value;
  }
  return doc;
}

namespace detail {

inline double parse_double(const std::string& where, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(),
          where + ": expected a number, got '" + v + "'");
  return out;
}

inline std::int64_t parse_int(const std::string& where, const std::string& v) {
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(),
          where + ": expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& where, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(),
          where + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError(where + ": expected a boolean, got '" + v + "'");
}

/// Shortest round-trip decimal form, so canonical text re-parses to the exact
/// same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  require(ec == std::errc(), "config: cannot format number");
  return std::string(buf, p);
}

/// Typed view over one section that records which keys were consumed, so
/// leftovers can be reported as unknown.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, std::string name) : name_(std::move(name)) {
    auto it = doc.sections.find(name_);
    if (it != doc.sections.end()) entries_ = &it->second;
  }

  void read(const char* key, double& out) {
    if (const std::string* v = take(key)) out = parse_double(at(key), *v);
  }
  void read(const char* key, int& out) {
    if (const std::string* v = take(key)) {
      const std::int64_t n = parse_int(at(key), *v);
      require(n >= INT_MIN && n <= INT_MAX, at(key) + ": integer out of range");
      out = static_cast<int>(n);
    }
  }
  void read(const char* key, Index& out) {
    if (const std::string* v = take(key)) out = static_cast<Index>(parse_int(at(key), *v));
  }
  void read(const char* key, std::uint64_t& out) {
    if (const std::string* v = take(key)) out = parse_uint(at(key), *v);
  }
  void read(const char* key, bool& out) {
    if (const std::string* v = take(key)) out = parse_bool(at(key), *v);
  }
  void read(const char* key, std::string& out) {
    if (const std::string* v = take(key)) out = *v;
  }

  /// Throws if any key in the section was never consumed.
  void finish() const {
    if (entries_ == nullptr) return;
    for (const auto& [key, value] : *entries_)
      require(consumed_.contains(key), "config: unknown key '" + key + "' in [" + name_ + "]");
  }

 private:
  const std::string* take(const char* key) {
    consumed_.insert(key);
    if (entries_ == nullptr) return nullptr;
    auto it = entries_->find(key);
    return it == entries_->end() ? nullptr : &it->second;
  }
  std::string at(const char* key) const { return "config [" + name_ + "] " + key; }

  std::string name_;
  const std::map<std::string, std::string>* entries_ = nullptr;
  std::set<std::string> consumed_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment configuration.

/// Ridge-mapping stage settings (window geometry, penalty, null draws).
struct RidgeConfig {
  double window_ms = 500.0;
  double step_ms = 100.0;
  double lambda = 1.0;
  int n_null = 8;  ///< averaged shuffled-pairing null evaluations per subject

  void validate() const {
    require(window_ms > 0.0 && step_ms > 0.0, "ridge: window and step must be positive");
    require(lambda >= 0.0, "ridge: lambda must be >= 0");
    require(n_null >= 1, "ridge: n_null must be positive");
  }
};

/// Everything a run needs, grouped by pipeline stage. Field defaults are the
/// experiment defaults; `canonical_text()` prints all of them.
struct ExperimentConfig {
  std::string output_dir = "out";
  PairingMode pairing = PairingMode::PairedByRepetition;
  std::uint64_t seed = 0;

  SynthConfig synth;            // seed is mirrored from `seed`
  PreprocessConfig preprocess;  // bandpass sample rate comes from the data
  RidgeConfig ridge;
  nnet::ModelConfig model;
  nnet::TrainConfig train;  // seed is mirrored from `seed`
  nnet::LossWeights loss;

  void validate() const {
    synth.validate();
    require(preprocess.bandpass.order >= 1, "preprocess: filter order must be >= 1");
    require(preprocess.bandpass.low_hz > 0.0 &&
                preprocess.bandpass.high_hz > preprocess.bandpass.low_hz,
            "preprocess: need 0 < low_hz < high_hz");
    require(preprocess.screen_z_threshold > 0.0, "preprocess: screen threshold must be positive");
    require(preprocess.dss_n_keep >= 1, "preprocess: dss_n_keep must be positive");
    require(preprocess.decimate_factor >= 1, "preprocess: decimate_factor must be >= 1");
    ridge.validate();
    model.validate();
    train.validate();
    loss.validate();
  }
};

/// Applies an INI document onto the defaults. Unknown sections or keys throw.
inline ExperimentConfig experiment_config_from_ini(const IniDocument& doc) {
  ExperimentConfig cfg;

  static const std::set<std::string> known = {"run",   "synth", "preprocess", "ridge",
                                              "model", "train", "loss"};
  for (const auto& [name, entries] : doc.sections)
    require(known.contains(name), "config: unknown section [" + name + "]");

  {
    detail::SectionReader run(doc, "run");
    run.read("output_dir", cfg.output_dir);
    std::string pairing = to_string(cfg.pairing);
    run.read("pairing", pairing);
    cfg.pairing = pairing_mode_from_string(pairing);
    run.read("seed", cfg.seed);
    run.finish();
  }
  {
    detail::SectionReader synth(doc, "synth");
    synth.read("subjects", cfg.synth.n_subjects);
    synth.read("channels", cfg.synth.n_channels);
    synth.read("duration_s", cfg.synth.duration_s);
    synth.read("sample_rate_hz", cfg.synth.sample_rate_hz);
    synth.read("repetitions", cfg.synth.n_repetitions);
    synth.read("latent_dim", cfg.synth.latent_dim);
    synth.read("snr_listen", cfg.synth.snr_listen);
    synth.read("snr_imagine", cfg.synth.snr_imagine);
    synth.read("jitter_ms", cfg.synth.jitter_ms);
    synth.read("latent_band_lo_hz", cfg.synth.latent_band_lo_hz);
    synth.read("latent_band_hi_hz", cfg.synth.latent_band_hi_hz);
    synth.finish();
  }
  {
    detail::SectionReader pre(doc, "preprocess");
    pre.read("bandpass_order", cfg.preprocess.bandpass.order);
    pre.read("bandpass_low_hz", cfg.preprocess.bandpass.low_hz);
    pre.read("bandpass_high_hz", cfg.preprocess.bandpass.high_hz);
    pre.read("screen_z_threshold", cfg.preprocess.screen_z_threshold);
    pre.read("dss_n_keep", cfg.preprocess.dss_n_keep);
    pre.read("dss_rank_tolerance", cfg.preprocess.dss_rank_tolerance);
    pre.read("apply_dss", cfg.preprocess.apply_dss);
    pre.read("decimate_factor", cfg.preprocess.decimate_factor);
    pre.finish();
  }
  {
    detail::SectionReader ridge(doc, "ridge");
    ridge.read("window_ms", cfg.ridge.window_ms);
    ridge.read("step_ms", cfg.ridge.step_ms);
    ridge.read("lambda", cfg.ridge.lambda);
    ridge.read("n_null", cfg.ridge.n_null);
    ridge.finish();
  }
  {
    detail::SectionReader model(doc, "model");
    model.read("hidden1", cfg.model.hidden1);
    model.read("hidden2", cfg.model.hidden2);
    model.read("kernel", cfg.model.kernel);
    model.read("dropout", cfg.model.dropout_p);
    model.finish();
  }
  {
    detail::SectionReader train(doc, "train");
    train.read("learning_rate", cfg.train.learning_rate);
    train.read("beta1", cfg.train.beta1);
    train.read("beta2", cfg.train.beta2);
    train.read("adam_eps", cfg.train.adam_eps);
    train.read("max_epochs", cfg.train.max_epochs);
    train.read("patience", cfg.train.patience);
    train.read("batch_size", cfg.train.batch_size);
    train.read("val_fraction", cfg.train.val_fraction);
    train.read("calibration_fraction", cfg.train.calibration_fraction);
    train.finish();
  }
  {
    detail::SectionReader loss(doc, "loss");
    loss.read("alpha", cfg.loss.alpha);
    loss.read("beta", cfg.loss.beta);
    loss.read("gamma", cfg.loss.gamma);
    loss.read("epsilon", cfg.loss.epsilon);
    loss.finish();
  }

  cfg.synth.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  return experiment_config_from_ini(parse_ini(text));
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

/// Serializes every effective setting (defaults included) in a fixed order.
/// The text re-parses to an equal configuration and is the basis of
/// `config_hash()`.
inline std::string canonical_config_text(const ExperimentConfig& cfg) {
  using detail::format_double;
  std::ostringstream out;
  out << "[run]\n";
  out << "output_dir = " << cfg.output_dir << "\n";
  out << "pairing = " << to_string(cfg.pairing) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "\n[synth]\n";
  out << "subjects = " << cfg.synth.n_subjects << "\n";
  out << "channels = " << cfg.synth.n_channels << "\n";
  out << "duration_s = " << format_double(cfg.synth.duration_s) << "\n";
  out << "sample_rate_hz = " << format_double(cfg.synth.sample_rate_hz) << "\n";
  out << "repetitions = " << cfg.synth.n_repetitions << "\n";
  out << "latent_dim = " << cfg.synth.latent_dim << "\n";
  out << "snr_listen = " << format_double(cfg.synth.snr_listen) << "\n";
  out << "snr_imagine = " << format_double(cfg.synth.snr_imagine) << "\n";
  out << "jitter_ms = " << format_double(cfg.synth.jitter_ms) << "\n";
  out << "latent_band_lo_hz = " << format_double(cfg.synth.latent_band_lo_hz) << "\n";
  out << "latent_band_hi_hz = " << format_double(cfg.synth.latent_band_hi_hz) << "\n";
  out << "\n[preprocess]\n";
  out << "bandpass_order = " << cfg.preprocess.bandpass.order << "\n";
  out << "bandpass_low_hz = " << format_double(cfg.preprocess.bandpass.low_hz) << "\n";
  out << "bandpass_high_hz = " << format_double(cfg.preprocess.bandpass.high_hz) << "\n";
  out << "screen_z_threshold = " << format_double(cfg.preprocess.screen_z_threshold) << "\n";
  out << "dss_n_keep = " << cfg.preprocess.dss_n_keep << "\n";
  out << "dss_rank_tolerance = " << format_double(cfg.preprocess.dss_rank_tolerance) << "\n";
  out << "apply_dss = " << (cfg.preprocess.apply_dss ? "true" : "false") << "\n";
  out << "decimate_factor = " << cfg.preprocess.decimate_factor << "\n";
  out << "\n[ridge]\n";
  out << "window_ms = " << format_double(cfg.ridge.window_ms) << "\n";
  out << "step_ms = " << format_double(cfg.ridge.step_ms) << "\n";
  out << "lambda = " << format_double(cfg.ridge.lambda) << "\n";
  out << "n_null = " << cfg.ridge.n_null << "\n";
  out << "\n[model]\n";
  out << "hidden1 = " << cfg.model.hidden1 << "\n";
  out << "hidden2 = " << cfg.model.hidden2 << "\n";
  out << "kernel = " << cfg.model.kernel << "\n";
  out << "dropout = " << format_double(cfg.model.dropout_p) << "\n";
  out << "\n[train]\n";
  out << "learning_rate = " << format_double(cfg.train.learning_rate) << "\n";
  out << "beta1 = " << format_double(cfg.train.beta1) << "\n";
  out << "beta2 = " << format_double(cfg.train.beta2) << "\n";
  out << "adam_eps = " << format_double(cfg.train.adam_eps) << "\n";
  out << "max_epochs = " << cfg.train.max_epochs << "\n";
  out << "patience = " << cfg.train.patience << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "val_fraction = " << format_double(cfg.train.val_fraction) << "\n";
  out << "calibration_fraction = " << format_double(cfg.train.calibration_fraction) << "\n";
  out << "\n[loss]\n";
  out << "alpha = " << format_double(cfg.loss.alpha) << "\n";
  out << "beta = " << format_double(cfg.loss.beta) << "\n";
  out << "gamma = " << format_double(cfg.loss.gamma) << "\n";
  out << "epsilon = " << format_double(cfg.loss.epsilon) << "\n";
  return out.str();
}

/// FNV-1a fingerprint of the canonical text.
inline std::string config_hash(const ExperimentConfig& cfg) {
  return fnv1a64_hex(canonical_config_text(cfg));
}

}  // namespace imago
