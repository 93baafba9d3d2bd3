#include <catch2/catch_amalgamated.hpp>

#include <imago/dss.hpp>
#include <imago/rng.hpp>
#include <imago/stats.hpp>
#include <imago/synth.hpp>
#include <imago/trial.hpp>

#include <cmath>
#include <vector>

using namespace imago;
using Catch::Approx;

namespace {

SubjectDataset make_subject(const std::vector<Matrix>& trial_data,
                            const std::vector<ConditionLabel>& conditions,
                            const std::vector<int>& repetitions) {
  SubjectDataset ds;
  ds.subject_id = "S01";
  for (Index ch = 0; ch < trial_data.front().rows(); ++ch)
    ds.channel_names.push_back("MEG" + std::to_string(ch));
  for (std::size_t i = 0; i < trial_data.size(); ++i) {
    TrialRecord tr;
    tr.subject_id = "S01";
    tr.condition = conditions[i];
    tr.repetition = repetitions[i];
    tr.sample_rate_hz = 100.0;
    tr.data = trial_data[i];
    ds.trials.push_back(std::move(tr));
  }
  ds.sort_trials();
  return ds;
}

/// One repeatable source mixed into C channels plus spatially correlated
/// noise, `reps` repetitions of one condition.
struct PlantedDesign {
  SubjectDataset subject;
  Vector source;  // T
  Vector mixing;  // C
};

PlantedDesign planted_design(Index c, Index t, int reps, double noise_scale,
                             std::uint64_t seed) {
  PlantedDesign out;
  const Matrix src = latent_band_limited_noise(1, t, 0.5, 8.0, 100.0,
                                               derive_seed(seed, "source"));
  out.source = src.row(0).transpose();

  Rng mix_rng(derive_seed(seed, "mixing"));
  out.mixing = mix_rng.normal_matrix(c, 1).col(0);
  out.mixing /= out.mixing.norm() / std::sqrt(static_cast<double>(c));

  Rng noise_mix_rng(derive_seed(seed, "noise-mixing"));
  Matrix noise_mix = noise_mix_rng.normal_matrix(c, c);
  noise_mix *= std::sqrt(static_cast<double>(c)) / noise_mix.norm();

  std::vector<Matrix> data;
  std::vector<ConditionLabel> conds;
  std::vector<int> rep_ids;
  for (int r = 0; r < reps; ++r) {
    Rng noise_rng(derive_seed(seed, "noise", r));
    Matrix trial = out.mixing * out.source.transpose() +
                   noise_scale * (noise_mix * noise_rng.normal_matrix(c, t));
    data.push_back(std::move(trial));
    conds.push_back({Stimulus::Melody1, Task::Listen});
    rep_ids.push_back(r);
  }
  out.subject = make_subject(data, conds, rep_ids);
  return out;
}

double mean_abs_channel_corr(const Matrix& data, const Vector& source) {
  double acc = 0.0;
  for (Index ch = 0; ch < data.rows(); ++ch)
    acc += std::abs(stats::pearson_r_or_null(data.row(ch).transpose(), source).value_or(0.0));
  return acc / static_cast<double>(data.rows());
}

}  // namespace

TEST_CASE("first DSS component recovers a planted repeatable source", "[dss]") {
  const auto design = planted_design(16, 600, 10, 1.0, 2024);
  const DssModel m = fit_dss(design.subject, 7);

  REQUIRE(m.scores.size() >= 7);
  const Matrix sources = dss_sources(m, design.subject.trials[0].data);
  const double r =
      stats::pearson_r(sources.row(0).transpose(), design.source);
  CHECK(std::abs(r) > 0.9);

  // The repeatable component clearly outscores the rest.
  CHECK(m.scores[0] > 2.0 * m.scores[1]);
}

TEST_CASE("identical repeated trials give consistency score 1", "[dss]") {
  Rng rng(99);
  const Matrix base = rng.normal_matrix(8, 200);
  const auto ds = make_subject({base, base, base},
                               {{Stimulus::Poem1, Task::Imagine},
                                {Stimulus::Poem1, Task::Imagine},
                                {Stimulus::Poem1, Task::Imagine}},
                               {0, 1, 2});
  const DssModel m = fit_dss(ds, 3);
  CHECK(m.scores[0] == Approx(1.0).margin(1e-6));
  // All power survives averaging, so every component scores 1.
  CHECK(m.scores[m.scores.size() - 1] == Approx(1.0).margin(1e-6));
}

TEST_CASE("independent noise trials score below 0.3 everywhere", "[dss]") {
  const Index c = 16, t = 500;
  std::vector<Matrix> data;
  std::vector<ConditionLabel> conds;
  std::vector<int> reps;
  for (int r = 0; r < 10; ++r) {
    Rng rng(derive_seed(555, "pure-noise", r));
    data.push_back(rng.normal_matrix(c, t));
    conds.push_back({Stimulus::Melody2, Task::Listen});
    reps.push_back(r);
  }
  const DssModel m = fit_dss(make_subject(data, conds, reps), 7);
  for (Index k = 0; k < m.scores.size(); ++k) CHECK(m.scores[k] < 0.3);
}

TEST_CASE("whitened baseline covariance is the identity", "[dss]") {
  const auto design = planted_design(12, 400, 5, 0.8, 7);
  const DssModel m = fit_dss(design.subject, 5);

  const Index c = design.subject.channels();
  const Index t = design.subject.trials.front().samples();
  const double n = static_cast<double>(design.subject.trials.size()) * static_cast<double>(t);
  Vector mean = Vector::Zero(c);
  for (const auto& tr : design.subject.trials) mean += tr.data.rowwise().sum();
  mean /= n;
  Matrix c0 = Matrix::Zero(c, c);
  for (const auto& tr : design.subject.trials) {
    const Matrix x = tr.data.colwise() - mean;
    c0.noalias() += x * x.transpose();
  }
  c0 /= n;

  const Matrix eye = m.whitener * c0 * m.whitener.transpose();
  CHECK((eye - Matrix::Identity(m.rank, m.rank)).cwiseAbs().maxCoeff() < 1e-8);

  // Scores are sorted non-increasing and live in [0, 1].
  for (Index k = 0; k + 1 < m.scores.size(); ++k) CHECK(m.scores[k] >= m.scores[k + 1]);
  CHECK(m.scores[0] <= 1.0);
  CHECK(m.scores[m.scores.size() - 1] >= 0.0);
}

TEST_CASE("denoising is a linear idempotent projection", "[dss]") {
  const auto design = planted_design(10, 300, 6, 1.2, 31);
  const DssModel m = fit_dss(design.subject, 4);

  const Matrix p = m.remixer * m.unmixer;
  CHECK((p * p - p).cwiseAbs().maxCoeff() < 1e-8);

  const Matrix& x = design.subject.trials[2].data;
  const Matrix once = apply_dss(m, x);
  const Matrix twice = apply_dss(m, once);
  CHECK((twice - once).cwiseAbs().maxCoeff() < 1e-9);

  // Output shape equals input shape.
  CHECK(once.rows() == x.rows());
  CHECK(once.cols() == x.cols());
}

TEST_CASE("keeping every component reproduces the input", "[dss]") {
  Rng rng(42);
  const Index c = 8, t = 300;
  std::vector<Matrix> data;
  for (int r = 0; r < 2; ++r) data.push_back(rng.normal_matrix(c, t));
  const auto ds = make_subject(data,
                               {{Stimulus::Melody1, Task::Listen},
                                {Stimulus::Melody1, Task::Listen}},
                               {0, 1});
  const DssModel m = fit_dss(ds, static_cast<int>(c));
  REQUIRE(m.rank == c);
  const Matrix out = apply_dss(m, data[0]);
  CHECK((out - data[0]).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("data inside the kept span passes through unchanged", "[dss]") {
  const auto design = planted_design(12, 400, 5, 1.0, 61);
  const DssModel m = fit_dss(design.subject, 3);

  Rng rng(4711);
  const Matrix z = rng.normal_matrix(3, 400);
  const Matrix y = m.remixer * z;
  CHECK((apply_dss(m, y) - y).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rank-1 denoising improves correlation with the planted source", "[dss]") {
  const auto design = planted_design(16, 600, 10, 1.5, 915);
  const DssModel m = fit_dss(design.subject, 1);

  const Matrix& raw = design.subject.trials[0].data;
  const Matrix den = apply_dss(m, raw);
  CHECK(mean_abs_channel_corr(den, design.source) >
        mean_abs_channel_corr(raw, design.source));
}

TEST_CASE("scores are invariant to channel permutation", "[dss]") {
  const auto design = planted_design(9, 350, 6, 1.0, 77);
  const DssModel base = fit_dss(design.subject, 4);

  Rng rng(123);
  const std::vector<int> perm = rng.permutation(9);
  SubjectDataset permuted = design.subject;
  for (auto& tr : permuted.trials) {
    Matrix d(tr.data.rows(), tr.data.cols());
    for (Index ch = 0; ch < d.rows(); ++ch) d.row(ch) = tr.data.row(perm[static_cast<std::size_t>(ch)]);
    tr.data = std::move(d);
  }
  const DssModel shuffled = fit_dss(permuted, 4);

  for (Index k = 0; k < base.scores.size(); ++k)
    CHECK(shuffled.scores[k] == Approx(base.scores[k]).margin(1e-9));

  // Unmixer rows act on permuted channels, up to a per-component sign.
  for (Index k = 0; k < base.unmixer.rows(); ++k) {
    Vector unpermuted(base.unmixer.cols());
    for (Index ch = 0; ch < unpermuted.size(); ++ch)
      unpermuted[perm[static_cast<std::size_t>(ch)]] = shuffled.unmixer(k, ch);
    const double same = (unpermuted - base.unmixer.row(k).transpose()).norm();
    const double flipped = (unpermuted + base.unmixer.row(k).transpose()).norm();
    CHECK(std::min(same, flipped) < 1e-8);
  }
}

TEST_CASE("split-half reproducibility does not drop after denoising", "[dss]") {
  SynthConfig cfg;
  cfg.n_subjects = 1;
  cfg.n_channels = 16;
  cfg.duration_s = 6.0;
  cfg.sample_rate_hz = 100.0;
  cfg.n_repetitions = 10;
  cfg.snr_listen = 1.0;
  cfg.snr_imagine = 0.5;
  cfg.latent_dim = 4;
  cfg.seed = 424242;
  const auto [subjects, gt] = generate_dataset(cfg);
  const SubjectDataset& ds = subjects[0];

  const DssModel m = fit_dss(ds, 7);

  auto split_half = [&](bool denoise) {
    double acc = 0.0;
    int n = 0;
    for (const ConditionLabel cond : all_conditions()) {
      const auto idx = ds.trial_indices(cond);
      Matrix a = Matrix::Zero(ds.channels(), ds.trials.front().samples());
      Matrix b = a;
      int na = 0, nb = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Matrix d = ds.trials[static_cast<std::size_t>(idx[i])].data;
        if (denoise) d = apply_dss(m, d);
        if (i < idx.size() / 2) {
          a += d;
          ++na;
        } else {
          b += d;
          ++nb;
        }
      }
      a /= na;
      b /= nb;
      const Eigen::Map<const Vector> va(a.data(), a.size());
      const Eigen::Map<const Vector> vb(b.data(), b.size());
      acc += stats::pearson_r(va, vb);
      ++n;
    }
    return acc / n;
  };

  const double before = split_half(false);
  const double after = split_half(true);
  CHECK(after >= before);
  CHECK(after > 0.5);
}

TEST_CASE("degenerate inputs are rejected", "[dss]") {
  // Rank-deficient data: rank 2 but n_keep 7.
  Rng rng(5);
  const Matrix basis = rng.normal_matrix(10, 2);
  std::vector<Matrix> data;
  for (int r = 0; r < 4; ++r) data.push_back(basis * rng.normal_matrix(2, 200));
  const auto low_rank = make_subject(data,
                                     std::vector<ConditionLabel>(4, {Stimulus::Melody1, Task::Listen}),
                                     {0, 1, 2, 3});
  CHECK_THROWS_WITH(fit_dss(low_rank, 7), Catch::Matchers::ContainsSubstring("rank"));

  // No condition with >= 2 repetitions.
  const auto lonely = make_subject({rng.normal_matrix(6, 100), rng.normal_matrix(6, 100)},
                                   {{Stimulus::Melody1, Task::Listen},
                                    {Stimulus::Melody2, Task::Listen}},
                                   {0, 0});
  CHECK_THROWS_AS(fit_dss(lonely, 3), ValidationError);

  // Channel mismatch in apply.
  const auto design = planted_design(8, 200, 3, 1.0, 8);
  const DssModel m = fit_dss(design.subject, 2);
  CHECK_THROWS_AS(apply_dss(m, Matrix::Zero(9, 200)), ValidationError);
  CHECK_THROWS_AS(dss_sources(m, Matrix::Zero(7, 200)), ValidationError);

  CHECK_THROWS_AS(fit_dss(design.subject, 0), ValidationError);
  CHECK_THROWS_AS(fit_dss(design.subject, 2, 0.0), ValidationError);
}
