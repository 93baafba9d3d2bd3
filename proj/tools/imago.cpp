// imago: command-line driver for the imagined-to-listened mapping pipeline.
//
// Subcommands cover the pipeline stages one to one:
//   synth       generate the synthetic dataset (plus ground truth)
//   preprocess  screen / filter / denoise / z-score / decimate
//   rsa         similarity matrices, block averages, correlation classifier
//   ridge       sliding-window ridge mapping with LOTO, nulls, within/between
//   cnn-train   train one encoder-decoder backbone on the whole dataset
//   cnn-eval    leave-one-subject-out protocol with matched-seed nulls
//   report      aggregate per-subject results into paired tables and CSVs
//
// Every stage appends an audit entry (parameters, seed, config hash, output
// fingerprints) to run_manifest.json in the output root. Reruns with the
// same config and seed produce byte-identical result files. Exit codes:
// 0 success, 2 validation/config error, 1 runtime failure.

#include <imago/config.hpp>
#include <imago/dataset_io.hpp>
#include <imago/ground_truth_io.hpp>
#include <imago/manifest.hpp>
#include <imago/nnet/train.hpp>
#include <imago/preprocess.hpp>
#include <imago/ridge.hpp>
#include <imago/rsa.hpp>
#include <imago/stats.hpp>
#include <imago/synth.hpp>

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace imago {
namespace {

// ---------------------------------------------------------------------------
// Shared plumbing.

struct CommonArgs {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool force = false;
};

void add_common_options(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_file, "Configuration file (key = value sections)");
  cmd->add_option("--seed", args->seed, "Override the configured seed");
  cmd->add_option("--jobs", args->jobs, "Parallel workers for per-subject stages")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--force", args->force, "Overwrite existing non-empty outputs");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_file.empty()) cfg = load_experiment_config(args.config_file);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.synth.seed = *args.seed;
    cfg.train.seed = *args.seed;
  }
  cfg.validate();
  return cfg;
}

/// Output root: IMAGO_OUT overrides the configured output directory.
fs::path output_root(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("IMAGO_OUT"); env != nullptr && *env != '\0')
    return fs::path(env);
  return fs::path(cfg.output_dir);
}

/// The parameters a stage's outputs actually depend on, used both for the
/// manifest record and for cross-stage consistency checks.
Json stage_parameters(const ExperimentConfig& cfg, const std::string& stage) {
  Json j;
  if (stage == "synth") {
    j["subjects"] = cfg.synth.n_subjects;
    j["channels"] = cfg.synth.n_channels;
    j["duration_s"] = cfg.synth.duration_s;
    j["sample_rate_hz"] = cfg.synth.sample_rate_hz;
    j["repetitions"] = cfg.synth.n_repetitions;
    j["latent_dim"] = cfg.synth.latent_dim;
    j["snr_listen"] = cfg.synth.snr_listen;
    j["snr_imagine"] = cfg.synth.snr_imagine;
    j["jitter_ms"] = cfg.synth.jitter_ms;
    j["latent_band_lo_hz"] = cfg.synth.latent_band_lo_hz;
    j["latent_band_hi_hz"] = cfg.synth.latent_band_hi_hz;
    j["seed"] = cfg.seed;
  } else if (stage == "preprocess") {
    j["bandpass_order"] = cfg.preprocess.bandpass.order;
    j["bandpass_low_hz"] = cfg.preprocess.bandpass.low_hz;
    j["bandpass_high_hz"] = cfg.preprocess.bandpass.high_hz;
    j["screen_z_threshold"] = cfg.preprocess.screen_z_threshold;
    j["dss_n_keep"] = cfg.preprocess.dss_n_keep;
    j["dss_rank_tolerance"] = cfg.preprocess.dss_rank_tolerance;
    j["apply_dss"] = cfg.preprocess.apply_dss;
    j["decimate_factor"] = cfg.preprocess.decimate_factor;
    j["stage_order"] = "screen,bandpass,dss,zscore,decimate";
  } else if (stage == "rsa") {
    j = Json::object();
  } else if (stage == "ridge") {
    j["window_ms"] = cfg.ridge.window_ms;
    j["step_ms"] = cfg.ridge.step_ms;
    j["lambda"] = cfg.ridge.lambda;
    j["n_null"] = cfg.ridge.n_null;
    j["pairing"] = to_string(cfg.pairing);
    j["seed"] = cfg.seed;
  } else if (stage == "cnn-train" || stage == "cnn-eval") {
    j["hidden1"] = cfg.model.hidden1;
    j["hidden2"] = cfg.model.hidden2;
    j["kernel"] = cfg.model.kernel;
    j["dropout"] = cfg.model.dropout_p;
    j["learning_rate"] = cfg.train.learning_rate;
    j["max_epochs"] = cfg.train.max_epochs;
    j["patience"] = cfg.train.patience;
    j["batch_size"] = cfg.train.batch_size;
    j["val_fraction"] = cfg.train.val_fraction;
    j["calibration_fraction"] = cfg.train.calibration_fraction;
    j["loss_alpha"] = cfg.loss.alpha;
    j["loss_beta"] = cfg.loss.beta;
    j["loss_gamma"] = cfg.loss.gamma;
    j["pairing"] = to_string(cfg.pairing);
    j["seed"] = cfg.seed;
  }
  return j;
}

/// Finds the most recent manifest entry for `stage`, or null if it never ran.
const StageRecord* find_stage(const RunManifest& manifest, const std::string& stage) {
  for (auto it = manifest.stages.rbegin(); it != manifest.stages.rend(); ++it)
    if (it->name == stage) return &*it;
  return nullptr;
}

/// Ensures `stage` ran before, with parameters matching the current config
/// (so a stage cannot silently consume data generated under different
/// settings), and that its recorded outputs are still intact on disk.
void verify_upstream(const fs::path& root, const RunManifest& manifest,
                     const ExperimentConfig& cfg, const std::string& stage) {
  const StageRecord* record = find_stage(manifest, stage);
  require(record != nullptr,
          "missing upstream outputs: run 'imago " + stage + "' into this output root first");
  // The record may carry extra bookkeeping (e.g. a dataset fingerprint), so
  // compare only the parameters the current config implies.
  const Json want = stage_parameters(cfg, stage);
  for (const auto& [key, value] : want.items())
    if (!record->parameters.contains(key) || record->parameters.at(key) != value)
      throw ValidationError("config/manifest mismatch: [" + stage + "] parameter '" + key +
                            "' was recorded with a different value; rerun 'imago " + stage +
                            "' with the current configuration");
  for (const auto& [file, fingerprint] : record->outputs) {
    const fs::path path = root / file;
    require(fs::exists(path), "config/manifest mismatch: recorded output missing: " + file);
    require(file_fingerprint(path) == fingerprint,
            "config/manifest mismatch: recorded output changed on disk: " + file);
  }
}

/// Relative paths (generic separators) of every regular file under dir.
std::vector<std::string> files_under(const fs::path& root, const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file())
      files.push_back(fs::relative(entry.path(), root).generic_string());
  std::sort(files.begin(), files.end());
  return files;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  detail::write_text_file(path, text);
}

std::string fmt(double v) { return detail::format_double(v); }

/// Runs fn(i) for i in [0, n) on `jobs` threads; results must be written to
/// index-addressed slots so the merged order stays deterministic.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(jobs, n);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const fs::path out = root / "synth";
  if (fs::exists(out) && !fs::is_empty(out) && !args.force)
    throw ValidationError("output directory exists and is not empty: " + out.string() +
                          " (pass --force to overwrite)");

  auto [subjects, truth] = generate_dataset(cfg.synth);
  save_dataset(out, subjects);
  save_ground_truth(out / "ground_truth", truth);

  Json params = stage_parameters(cfg, "synth");
  params["dataset_fingerprint"] = directory_fingerprint(out);
  record_stage(root, "synth", params, config_hash(cfg), cfg.seed, "", files_under(root, out));
  std::printf("synth: %d subjects, %zu trials each -> %s\n", cfg.synth.n_subjects,
              subjects.front().trials.size(), out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

int cmd_preprocess(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const RunManifest manifest = load_run_manifest(root);
  verify_upstream(root, manifest, cfg, "synth");

  const fs::path in = root / "synth";
  const fs::path out = root / "preprocessed";
  const auto subjects = load_dataset(in);

  const double in_rate = subjects.front().sample_rate_hz();
  if (cfg.preprocess.decimate_factor > 1 && in_rate <= 100.0)
    std::fprintf(stderr,
                 "warning: input is already at %.6g Hz; decimating by %d takes it to %.6g Hz "
                 "(factor honored as configured)\n",
                 in_rate, cfg.preprocess.decimate_factor,
                 in_rate / cfg.preprocess.decimate_factor);

  std::vector<SubjectDataset> processed(subjects.size());
  std::vector<PreprocessReport> reports(subjects.size());
  parallel_for(static_cast<int>(subjects.size()), args.jobs, [&](int i) {
    const auto s = static_cast<std::size_t>(i);
    processed[s] = run_preprocess(subjects[s], cfg.preprocess, &reports[s]);
  });

  save_dataset(out, processed);

  Json per_subject = Json::array();
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    Json entry;
    entry["subject_id"] = subjects[s].subject_id;
    entry["kept_channels"] = reports[s].screen.kept;
    entry["dropped_channels"] = reports[s].screen.dropped;
    entry["input_sample_rate_hz"] = reports[s].input_sample_rate_hz;
    entry["output_sample_rate_hz"] = reports[s].output_sample_rate_hz;
    per_subject.push_back(entry);
  }
  Json report;
  report["parameters"] = stage_parameters(cfg, "preprocess");
  report["subjects"] = per_subject;
  write_text(out / "preprocess_report.json", report.dump(2) + "\n");

  record_stage(root, "preprocess", stage_parameters(cfg, "preprocess"), config_hash(cfg),
               cfg.seed, directory_fingerprint(in), files_under(root, out));
  std::printf("preprocess: %zu subjects -> %s (%.6g Hz)\n", processed.size(),
              out.string().c_str(), reports.front().output_sample_rate_hz);
  return 0;
}

// ---------------------------------------------------------------------------
// rsa

int cmd_rsa(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const RunManifest manifest = load_run_manifest(root);
  verify_upstream(root, manifest, cfg, "preprocess");

  const fs::path in = root / "preprocessed";
  const fs::path out = root / "rsa";
  const auto subjects = load_dataset(in);
  const int n = static_cast<int>(subjects.size());

  std::vector<ClassifyResult> classified(subjects.size());
  std::vector<BlockAverage> blocks(subjects.size());
  parallel_for(n, args.jobs, [&](int i) {
    const auto s = static_cast<std::size_t>(i);
    const SimilarityMatrix sim = trial_similarity(subjects[s]);
    blocks[s] = block_average(sim);
    classified[s] = classify_from_similarity(sim);
  });

  // Pooled confusion matrix, row-normalized to percentages.
  Eigen::Matrix<int, kNumConditions, kNumConditions> counts;
  counts.setZero();
  for (const auto& c : classified) counts += c.confusion.counts;
  std::string csv = "condition";
  for (int j = 0; j < kNumConditions; ++j)
    csv += "," + ConditionLabel::from_index(j).name();
  csv += "\n";
  for (int i = 0; i < kNumConditions; ++i) {
    csv += ConditionLabel::from_index(i).name();
    const double row_sum = counts.row(i).sum();
    for (int j = 0; j < kNumConditions; ++j)
      csv += "," + fmt(row_sum > 0 ? 100.0 * counts(i, j) / row_sum : 0.0);
    csv += "\n";
  }
  write_text(out / "confusion_matrix.csv", csv);

  // Per-subject block-averaged similarity (one row per subject x condition).
  std::string block_csv = "subject,condition";
  for (int j = 0; j < kNumConditions; ++j)
    block_csv += "," + ConditionLabel::from_index(j).name();
  block_csv += "\n";
  for (std::size_t s = 0; s < subjects.size(); ++s)
    for (int i = 0; i < kNumConditions; ++i) {
      block_csv += subjects[s].subject_id + "," + ConditionLabel::from_index(i).name();
      for (int j = 0; j < kNumConditions; ++j) block_csv += "," + fmt(blocks[s].values(i, j));
      block_csv += "\n";
    }
  write_text(out / "block_average.csv", block_csv);

  Json accuracy;
  accuracy["chance"] = 100.0 * kChanceLevel;
  Json per_subject = Json::array();
  double mean_acc = 0.0;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    per_subject.push_back({{"subject_id", subjects[s].subject_id},
                           {"accuracy", 100.0 * classified[s].accuracy}});
    mean_acc += 100.0 * classified[s].accuracy;
  }
  accuracy["per_subject"] = per_subject;
  accuracy["mean_accuracy"] = mean_acc / static_cast<double>(subjects.size());
  write_text(out / "accuracy.json", accuracy.dump(2) + "\n");

  record_stage(root, "rsa", stage_parameters(cfg, "rsa"), config_hash(cfg), cfg.seed,
               directory_fingerprint(in), files_under(root, out));
  std::printf("rsa: mean accuracy %.1f%% (chance %.1f%%) -> %s\n",
              accuracy["mean_accuracy"].get<double>(), 100.0 * kChanceLevel,
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// ridge

int cmd_ridge(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const RunManifest manifest = load_run_manifest(root);
  verify_upstream(root, manifest, cfg, "preprocess");

  const fs::path in = root / "preprocessed";
  const fs::path out = root / "ridge";
  const auto subjects = load_dataset(in);
  const int n = static_cast<int>(subjects.size());

  WindowSpec spec;
  spec.window_ms = cfg.ridge.window_ms;
  spec.step_ms = cfg.ridge.step_ms;
  spec.sample_rate_hz = subjects.front().sample_rate_hz();

  struct SubjectRidge {
    double r_true = 0.0;
    double r_null = 0.0;
    WithinBetweenResult wb;
  };
  std::vector<SubjectRidge> results(subjects.size());
  parallel_for(n, args.jobs, [&](int i) {
    const auto s = static_cast<std::size_t>(i);
    const TrialPairing pairing = build_pairing(subjects[s], cfg.pairing);
    results[s].r_true = loto_evaluate(subjects[s], pairing, spec, cfg.ridge.lambda).mean_r;
    double null_sum = 0.0;
    for (int k = 0; k < cfg.ridge.n_null; ++k)
      null_sum += null_shuffled_evaluate(subjects[s], pairing, spec, cfg.ridge.lambda,
                                         derive_seed(cfg.seed, "null", i, k))
                      .eval.mean_r;
    results[s].r_null = null_sum / cfg.ridge.n_null;
    results[s].wb = within_between_class(subjects[s], pairing, spec, cfg.ridge.lambda);
  });

  std::vector<std::string> ids;
  std::vector<double> r_true, r_null;
  std::vector<double> within_all, between_all;
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    ids.push_back(subjects[s].subject_id);
    r_true.push_back(results[s].r_true);
    r_null.push_back(results[s].r_null);
    within_all.insert(within_all.end(), results[s].wb.within.begin(),
                      results[s].wb.within.end());
    between_all.insert(between_all.end(), results[s].wb.between.begin(),
                       results[s].wb.between.end());
  }
  const stats::EvalReport group = stats::build_eval_report(ids, r_true, r_null);
  const stats::RankSumResult wb_test = stats::rank_sum(within_all, between_all, true);

  // Pooled within/between histogram on the shared [-1, 1] edges.
  const Vector& edges = results.front().wb.bin_edges;
  std::vector<int> within_counts(results.front().wb.within_counts.size(), 0);
  std::vector<int> between_counts(within_counts.size(), 0);
  for (const auto& r : results)
    for (std::size_t b = 0; b < within_counts.size(); ++b) {
      within_counts[b] += r.wb.within_counts[b];
      between_counts[b] += r.wb.between_counts[b];
    }
  std::string hist = "bin_lo,bin_hi,within_count,between_count\n";
  for (std::size_t b = 0; b < within_counts.size(); ++b)
    hist += fmt(edges[static_cast<Index>(b)]) + "," + fmt(edges[static_cast<Index>(b + 1)]) +
            "," + std::to_string(within_counts[b]) + "," + std::to_string(between_counts[b]) +
            "\n";
  write_text(out / "within_between_histogram.csv", hist);

  Json aggregate;
  Json per_subject = Json::array();
  for (std::size_t s = 0; s < subjects.size(); ++s)
    per_subject.push_back({{"subject_id", ids[s]},
                           {"r_true", group.r_true[s]},
                           {"r_null", group.r_null[s]},
                           {"z_true", group.z_true[s]},
                           {"z_null", group.z_null[s]}});
  aggregate["per_subject"] = per_subject;
  aggregate["group"] = {{"mean_r_true", group.mean_r_true},
                        {"mean_r_null", group.mean_r_null},
                        {"sem_r_true", group.sem_r_true},
                        {"sem_r_null", group.sem_r_null},
                        {"wilcoxon_w", group.wilcoxon_w},
                        {"wilcoxon_p", group.p_value},
                        {"n_subjects", group.n_subjects}};
  aggregate["within_between"] = {{"n_within", within_all.size()},
                                 {"n_between", between_all.size()},
                                 {"rank_sum_u", wb_test.u_statistic},
                                 {"rank_sum_p_one_sided", wb_test.p_value}};
  write_text(out / "aggregate.json", aggregate.dump(2) + "\n");

  record_stage(root, "ridge", stage_parameters(cfg, "ridge"), config_hash(cfg), cfg.seed,
               directory_fingerprint(in), files_under(root, out));
  std::printf("ridge: mean r_true %.4f vs r_null %.4f (p = %.3g) -> %s\n", group.mean_r_true,
              group.mean_r_null, group.p_value, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// cnn-train / cnn-eval

std::string training_log_csv(const nnet::TrainLog& log) {
  std::string csv =
      "epoch,train_mse,train_corr,train_temp,train_spec,train_total,"
      "val_mse,val_corr,val_temp,val_spec,val_total\n";
  for (std::size_t e = 0; e < log.epochs.size(); ++e) {
    const auto& t = log.epochs[e].train;
    const auto& v = log.epochs[e].val;
    csv += std::to_string(e) + "," + fmt(t.mse) + "," + fmt(t.corr) + "," + fmt(t.temp) + "," +
           fmt(t.spec) + "," + fmt(t.total) + "," + fmt(v.mse) + "," + fmt(v.corr) + "," +
           fmt(v.temp) + "," + fmt(v.spec) + "," + fmt(v.total) + "\n";
  }
  return csv;
}

nnet::ModelConfig arch_for(const ExperimentConfig& cfg, const std::vector<SubjectDataset>& data) {
  nnet::ModelConfig arch = cfg.model;
  arch.channels = data.front().channels();
  return arch;
}

int cmd_cnn_train(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const RunManifest manifest = load_run_manifest(root);
  verify_upstream(root, manifest, cfg, "preprocess");

  const fs::path in = root / "preprocessed";
  const fs::path out = root / "cnn";
  const auto subjects = load_dataset(in);

  auto [model, log] =
      nnet::train_backbone(subjects, cfg.pairing, arch_for(cfg, subjects), cfg.train, cfg.loss);

  fs::create_directories(out);
  Json extra;
  extra["config_hash"] = config_hash(cfg);
  extra["seed"] = cfg.seed;
  extra["best_epoch"] = log.best_epoch;
  nnet::save_checkpoint((out / "backbone.ckpt").string(), model, extra);
  write_text(out / "training_log.csv", training_log_csv(log));

  record_stage(root, "cnn-train", stage_parameters(cfg, "cnn-train"), config_hash(cfg), cfg.seed,
               directory_fingerprint(in),
               {"cnn/backbone.ckpt", "cnn/training_log.csv"});
  std::printf("cnn-train: %zu epochs (best %d, val %.6g) -> %s\n", log.epochs.size(),
              log.best_epoch, log.epochs[static_cast<std::size_t>(log.best_epoch)].val.total,
              out.string().c_str());
  return 0;
}

int cmd_cnn_eval(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const RunManifest manifest = load_run_manifest(root);
  verify_upstream(root, manifest, cfg, "preprocess");

  const fs::path in = root / "preprocessed";
  const fs::path out = root / "cnn";
  const auto subjects = load_dataset(in);

  const nnet::LosoReport report =
      nnet::evaluate_loso(subjects, cfg.pairing, arch_for(cfg, subjects), cfg.train, cfg.loss);

  Json j;
  Json per_subject = Json::array();
  for (std::size_t s = 0; s < report.group.subject_ids.size(); ++s)
    per_subject.push_back({{"subject_id", report.group.subject_ids[s]},
                           {"r_true", report.group.r_true[s]},
                           {"r_null", report.group.r_null[s]},
                           {"z_true", report.group.z_true[s]},
                           {"z_null", report.group.z_null[s]},
                           {"best_epoch_true", report.best_epoch_true[s]},
                           {"best_epoch_null", report.best_epoch_null[s]}});
  j["per_subject"] = per_subject;
  j["group"] = {{"mean_r_true", report.group.mean_r_true},
                {"mean_r_null", report.group.mean_r_null},
                {"sem_r_true", report.group.sem_r_true},
                {"sem_r_null", report.group.sem_r_null},
                {"wilcoxon_w", report.group.wilcoxon_w},
                {"wilcoxon_p", report.group.p_value},
                {"n_subjects", report.group.n_subjects}};
  write_text(out / "loso_report.json", j.dump(2) + "\n");

  record_stage(root, "cnn-eval", stage_parameters(cfg, "cnn-eval"), config_hash(cfg), cfg.seed,
               directory_fingerprint(in), {"cnn/loso_report.json"});
  std::printf("cnn-eval: mean r_true %.4f vs r_null %.4f (p = %.3g) -> %s\n",
              report.group.mean_r_true, report.group.mean_r_null, report.group.p_value,
              out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// report

std::string paired_table_csv(const Json& per_subject) {
  std::string csv = "subject,r_true,r_null,z_true,z_null\n";
  for (const auto& row : per_subject)
    csv += row.at("subject_id").get<std::string>() + "," +
           fmt(row.at("r_true").get<double>()) + "," + fmt(row.at("r_null").get<double>()) +
           "," + fmt(row.at("z_true").get<double>()) + "," +
           fmt(row.at("z_null").get<double>()) + "\n";
  return csv;
}

int cmd_report(const CommonArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path root = output_root(cfg);
  const fs::path out = root / "report";
  Json summary;
  bool any = false;

  if (fs::exists(root / "rsa" / "accuracy.json")) {
    const Json accuracy = Json::parse(detail::read_text_file(root / "rsa" / "accuracy.json"));
    write_text(out / "confusion_matrix.csv",
               detail::read_text_file(root / "rsa" / "confusion_matrix.csv"));
    summary["rsa"] = {{"mean_accuracy", accuracy.at("mean_accuracy")},
                      {"chance", accuracy.at("chance")}};
    any = true;
  }
  if (fs::exists(root / "ridge" / "aggregate.json")) {
    const Json agg = Json::parse(detail::read_text_file(root / "ridge" / "aggregate.json"));
    write_text(out / "ridge_paired.csv", paired_table_csv(agg.at("per_subject")));
    write_text(out / "within_between_histogram.csv",
               detail::read_text_file(root / "ridge" / "within_between_histogram.csv"));
    summary["ridge"] = {{"group", agg.at("group")}, {"within_between", agg.at("within_between")}};
    any = true;
  }
  if (fs::exists(root / "cnn" / "loso_report.json")) {
    const Json loso = Json::parse(detail::read_text_file(root / "cnn" / "loso_report.json"));
    write_text(out / "loso_paired.csv", paired_table_csv(loso.at("per_subject")));
    int above = 0;
    for (const auto& row : loso.at("per_subject"))
      if (row.at("r_true").get<double>() > row.at("r_null").get<double>()) ++above;
    Json group = loso.at("group");
    group["subjects_above_null"] = above;
    summary["cnn"] = {{"group", group}};
    any = true;
  }
  require(any,
          "missing upstream outputs: nothing to report (run rsa, ridge, or cnn-eval first)");
  write_text(out / "summary.json", summary.dump(2) + "\n");

  std::vector<std::string> outputs = files_under(root, out);
  record_stage(root, "report", Json::object(), config_hash(cfg), cfg.seed, "", outputs);
  std::printf("report: %zu files -> %s\n", outputs.size(), out.string().c_str());
  return 0;
}

}  // namespace
}  // namespace imago

int main(int argc, char** argv) {
  CLI::App app{"imagined-to-listened response mapping pipeline"};
  app.require_subcommand(1);

  imago::CommonArgs args;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  auto* preprocess = app.add_subcommand("preprocess", "Filter, denoise, and normalize");
  auto* rsa = app.add_subcommand("rsa", "Similarity analysis and correlation classifier");
  auto* ridge = app.add_subcommand("ridge", "Sliding-window ridge mapping with nulls");
  auto* cnn_train = app.add_subcommand("cnn-train", "Train the encoder-decoder backbone");
  auto* cnn_eval = app.add_subcommand("cnn-eval", "Leave-one-subject-out evaluation");
  auto* report = app.add_subcommand("report", "Aggregate results into paired tables");
  for (auto* cmd : {synth, preprocess, rsa, ridge, cnn_train, cnn_eval, report})
    imago::add_common_options(cmd, &args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return imago::cmd_synth(args);
    if (preprocess->parsed()) return imago::cmd_preprocess(args);
    if (rsa->parsed()) return imago::cmd_rsa(args);
    if (ridge->parsed()) return imago::cmd_ridge(args);
    if (cnn_train->parsed()) return imago::cmd_cnn_train(args);
    if (cnn_eval->parsed()) return imago::cmd_cnn_eval(args);
    if (report->parsed()) return imago::cmd_report(args);
  } catch (const imago::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
