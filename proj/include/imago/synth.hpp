#pragma once

// Synthetic imagined/listened dataset generator with planted ground truth.
//
// Per stimulus: a latent_dim x T band-limited latent source matrix, shared
// by all subjects. Per subject: a C x latent_dim mixing matrix (signal
// topographies) and a C x C noise mixing matrix (spatially correlated
// noise). A listened trial is mixed latents plus noise at snr_listen. An
// imagined trial applies a fixed zero-phase FIR kernel to the latents
// before mixing, adds noise at snr_imagine, and shifts the signal part by a
// per-trial onset jitter. With snr = infinity the noise term is absent;
// with jitter_ms = 0 the shift is absent, giving exact-recovery oracles.
//
// Scaling: trial = a * signal + b * noise with a = sqrt(snr / (1 + snr)),
// b = sqrt(1 / (1 + snr)); mixing matrices are Frobenius-normalized to
// sqrt(C), so signal and noise carry equal expected total power and the
// variance ratio matches snr.
//
// Every random stream derives from (seed, purpose, subject, ...) so
// generation order (serial or parallel across subjects) cannot change the
// output.

#include "imago/common.hpp"
#include "imago/fft.hpp"
#include "imago/rng.hpp"
#include "imago/trial.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace imago {

struct SynthConfig {
  int n_subjects = 11;
  int n_channels = 16;
  double duration_s = 27.0;
  double sample_rate_hz = 100.0;
  int n_repetitions = 10;
  int latent_dim = 4;
  double snr_listen = 4.0;
  double snr_imagine = 1.0;      ///< must not exceed snr_listen
  double jitter_ms = 250.0;      ///< imagined-trial onset jitter, 0 disables
  double latent_band_lo_hz = 0.5;
  double latent_band_hi_hz = 8.0;
  std::uint64_t seed = 0;

  Index samples() const {
    return static_cast<Index>(std::llround(duration_s * sample_rate_hz));
  }

  void validate() const {
    require(n_subjects >= 1, "synth: n_subjects must be positive");
    require(n_channels >= 1, "synth: n_channels must be positive");
    require(duration_s > 0.0, "synth: duration_s must be positive");
    require(sample_rate_hz > 0.0, "synth: sample_rate_hz must be positive");
    require(n_repetitions >= 1, "synth: n_repetitions must be positive");
    require(latent_dim >= 1, "synth: latent_dim must be positive");
    require(latent_dim <= n_channels, "synth: latent_dim must not exceed n_channels");
    require(snr_listen >= 0.0, "synth: snr_listen must be >= 0");
    require(snr_imagine >= 0.0, "synth: snr_imagine must be >= 0");
    require(snr_imagine <= snr_listen, "synth: snr_imagine must not exceed snr_listen");
    require(jitter_ms >= 0.0, "synth: jitter_ms must be >= 0");
    require(latent_band_lo_hz > 0.0 && latent_band_hi_hz > latent_band_lo_hz &&
                latent_band_hi_hz < sample_rate_hz / 2.0,
            "synth: latent band must satisfy 0 < lo < hi < Nyquist");
  }
};

struct GroundTruth {
  std::vector<std::string> subject_ids;
  std::vector<Matrix> latent_sources;  ///< per stimulus, latent_dim x T
  std::vector<Matrix> subject_mixing;  ///< per subject, C x latent_dim
  std::vector<Matrix> noise_mixing;    ///< per subject, C x C
  Vector imagery_kernel;               ///< zero-phase FIR taps, odd length
  /// jitter_samples[subject][stimulus][repetition], imagined trials only
  std::vector<std::vector<std::vector<int>>> jitter_samples;
};

/// The planted latent-space imagery kernel: symmetric (zero-phase) 5-tap
/// FIR, nearly flat over the latent band so the mapping stays invertible
/// in-band while still exercising temporal structure.
inline Vector default_imagery_kernel() {
  Vector h(5);
  h << 0.05, -0.10, 0.95, -0.10, 0.05;
  return h;
}

/// Same-length FIR along rows with zero-fill edges; center tap aligned, so
/// a symmetric kernel is zero-phase.
inline Matrix apply_fir_rows(const Vector& taps, const Matrix& x) {
  require(taps.size() % 2 == 1, "apply_fir_rows: kernel length must be odd");
  const Index center = taps.size() / 2;
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Index j = 0; j < taps.size(); ++j) {
    const Index shift = j - center;  // contribution of x(:, t - shift)
    const Index lo = std::max<Index>(0, shift);
    const Index hi = std::min(x.cols(), x.cols() + shift);
    if (hi <= lo) continue;
    y.middleCols(lo, hi - lo) += taps[j] * x.middleCols(lo - shift, hi - lo);
  }
  return y;
}

/// Shifts columns right by `shift` samples (left if negative), zero-filling.
inline Matrix time_shift_columns(const Matrix& x, Index shift) {
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  const Index t = x.cols();
  if (shift >= t || -shift >= t) return y;
  if (shift >= 0) y.middleCols(shift, t - shift) = x.middleCols(0, t - shift);
  else y.middleCols(0, t + shift) = x.middleCols(-shift, t + shift);
  return y;
}

/// dim x T matrix of band-limited unit-variance noise. Rows are built in
/// the frequency domain (iid Gaussian coefficients on the in-band bins,
/// zero elsewhere), transformed to time, and scaled to exactly zero mean
/// and unit variance. All spectral power lies inside [lo_hz, hi_hz].
inline Matrix latent_band_limited_noise(int dim, Index t, double lo_hz, double hi_hz,
                                        double sample_rate_hz, std::uint64_t seed) {
  require(dim >= 1, "latent_band_limited_noise: dim must be positive");
  require(t >= 8, "latent_band_limited_noise: need at least 8 samples");
  require(lo_hz > 0.0 && hi_hz > lo_hz && hi_hz < sample_rate_hz / 2.0,
          "latent_band_limited_noise: band must satisfy 0 < lo < hi < Nyquist");

  Matrix out(dim, t);
  bool any_bin = false;
  for (int r = 0; r < dim; ++r) {
    Rng rng(derive_seed(seed, "latent-row", r));
    ComplexVector spec = ComplexVector::Zero(t);
    for (Index k = 1; k <= (t - 1) / 2; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(t);
      if (f < lo_hz || f > hi_hz) continue;
      spec[k] = Complex(rng.normal(), rng.normal());
      any_bin = true;
    }
    make_conjugate_symmetric(spec);
    Vector x = fft_inverse_real(spec);
    const double mean = x.mean();
    x.array() -= mean;
    const double sd = population_sd(x);
    require(sd > 0.0, "latent_band_limited_noise: degenerate draw");
    out.row(r) = (x / sd).transpose();
  }
  require(any_bin, "latent_band_limited_noise: band contains no DFT bins");
  return out;
}

namespace detail {

/// Random C x K matrix, Frobenius-normalized to sqrt(C), guaranteed full
/// column rank (deterministic retry on near-degenerate draws).
inline Matrix random_mixing(Index c, Index k, std::uint64_t seed) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, "mixing-attempt", attempt));
    Matrix m = rng.normal_matrix(c, k);
    m *= std::sqrt(static_cast<double>(c)) / m.norm();
    const Eigen::JacobiSVD<Matrix> svd(m);
    const double cond_floor = svd.singularValues()(svd.singularValues().size() - 1);
    if (cond_floor > 1e-6 * svd.singularValues()(0)) return m;
  }
  throw RuntimeError("random_mixing: could not draw a full-rank matrix");
}

inline std::string subject_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02d", index + 1);
  return buf;
}

/// Rescales a matrix to unit root-mean-square over all entries.
inline Matrix unit_rms(Matrix m) {
  const double rms = std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
  require(rms > 0.0, "unit_rms: zero-power matrix");
  m /= rms;
  return m;
}

}  // namespace detail

/// Generates the full multi-subject dataset plus its ground truth.
///
/// Each trial is `a * signal_unit + b * noise_unit` where both parts are
/// rescaled to unit RMS and a^2/b^2 equals the configured SNR, so the
/// realized signal/noise power ratio matches the configuration per trial.
/// The imagery transform and onset jitter are applied to the signal part
/// before its normalization.
inline std::pair<std::vector<SubjectDataset>, GroundTruth> generate_dataset(
    const SynthConfig& cfg) {
  cfg.validate();
  const Index c = cfg.n_channels;
  const Index t = cfg.samples();
  const Index l = cfg.latent_dim;

  GroundTruth gt;
  gt.imagery_kernel = default_imagery_kernel();

  // Shared latent sources, one matrix per stimulus. Distinct stimuli must be
  // pairwise decorrelated (|r| < 0.2 row-wise); violating draws are redrawn
  // deterministically.
  for (int s = 0; s < kNumStimuli; ++s) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Matrix cand = latent_band_limited_noise(
          static_cast<int>(l), t, cfg.latent_band_lo_hz, cfg.latent_band_hi_hz,
          cfg.sample_rate_hz, derive_seed(cfg.seed, "latent-stimulus", s, attempt));
      ok = true;
      for (const Matrix& prev : gt.latent_sources) {
        for (Index r1 = 0; r1 < l && ok; ++r1)
          for (Index r2 = 0; r2 < l && ok; ++r2) {
            const double rr = cand.row(r1).dot(prev.row(r2)) /
                              (cand.row(r1).norm() * prev.row(r2).norm());
            if (std::abs(rr) >= 0.2) ok = false;
          }
        if (!ok) break;
      }
      if (ok) gt.latent_sources.push_back(std::move(cand));
    }
    if (!ok)
      throw RuntimeError("generate_dataset: could not draw decorrelated latent sources");
  }

  const double a_listen = std::isinf(cfg.snr_listen)
                              ? 1.0
                              : std::sqrt(cfg.snr_listen / (1.0 + cfg.snr_listen));
  const double b_listen =
      std::isinf(cfg.snr_listen) ? 0.0 : std::sqrt(1.0 / (1.0 + cfg.snr_listen));
  const double a_imag = std::isinf(cfg.snr_imagine)
                            ? 1.0
                            : std::sqrt(cfg.snr_imagine / (1.0 + cfg.snr_imagine));
  const double b_imag =
      std::isinf(cfg.snr_imagine) ? 0.0 : std::sqrt(1.0 / (1.0 + cfg.snr_imagine));

  const Index jitter_span = static_cast<Index>(
      std::llround(cfg.jitter_ms / 1000.0 * cfg.sample_rate_hz));

  std::vector<SubjectDataset> subjects;
  for (int s = 0; s < cfg.n_subjects; ++s) {
    SubjectDataset ds;
    ds.subject_id = detail::subject_name(s);
    for (Index ch = 0; ch < c; ++ch) ds.channel_names.push_back("MEG" + std::to_string(ch));

    const Matrix mixing = detail::random_mixing(c, l, derive_seed(cfg.seed, "signal-mix", s));
    const Matrix noise_mix = detail::random_mixing(c, c, derive_seed(cfg.seed, "noise-mix", s));
    gt.subject_ids.push_back(ds.subject_id);
    gt.subject_mixing.push_back(mixing);
    gt.noise_mixing.push_back(noise_mix);
    gt.jitter_samples.emplace_back(
        kNumStimuli, std::vector<int>(static_cast<std::size_t>(cfg.n_repetitions), 0));

    for (int stim = 0; stim < kNumStimuli; ++stim) {
      const Matrix& u = gt.latent_sources[static_cast<std::size_t>(stim)];
      const Matrix listened_signal = detail::unit_rms(mixing * u);
      const Matrix imagined_signal = mixing * apply_fir_rows(gt.imagery_kernel, u);

      for (int rep = 0; rep < cfg.n_repetitions; ++rep) {
        // Listened trial.
        {
          TrialRecord tr;
          tr.subject_id = ds.subject_id;
          tr.condition = {static_cast<Stimulus>(stim), Task::Listen};
          tr.repetition = rep;
          tr.sample_rate_hz = cfg.sample_rate_hz;
          tr.data = a_listen * listened_signal;
          if (b_listen > 0.0) {
            Rng rng(derive_seed(cfg.seed, "noise", s, 2 * stim, rep));
            tr.data.noalias() +=
                b_listen * detail::unit_rms(noise_mix * rng.normal_matrix(c, t));
          }
          ds.trials.push_back(std::move(tr));
        }
        // Imagined trial.
        {
          TrialRecord tr;
          tr.subject_id = ds.subject_id;
          tr.condition = {static_cast<Stimulus>(stim), Task::Imagine};
          tr.repetition = rep;
          tr.sample_rate_hz = cfg.sample_rate_hz;
          int jitter = 0;
          if (jitter_span > 0) {
            Rng rng(derive_seed(cfg.seed, "jitter", s, stim, rep));
            jitter = static_cast<int>(rng.uniform_int(-jitter_span, jitter_span));
          }
          gt.jitter_samples.back()[static_cast<std::size_t>(stim)]
                                  [static_cast<std::size_t>(rep)] = jitter;
          tr.data = a_imag * detail::unit_rms(time_shift_columns(imagined_signal, jitter));
          if (b_imag > 0.0) {
            Rng rng(derive_seed(cfg.seed, "noise", s, 2 * stim + 1, rep));
            tr.data.noalias() +=
                b_imag * detail::unit_rms(noise_mix * rng.normal_matrix(c, t));
          }
          ds.trials.push_back(std::move(tr));
        }
      }
    }
    ds.sort_trials();
    subjects.push_back(std::move(ds));
  }
  return {std::move(subjects), std::move(gt)};
}

}  // namespace imago
