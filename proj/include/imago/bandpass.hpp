#pragma once

// Butterworth bandpass design and zero-phase (forward-backward) filtering.
//
// Design path: analog Butterworth prototype -> frequency prewarp ->
// lowpass-to-bandpass transform -> bilinear transform -> second-order
// sections. Prewarping makes the digital magnitude response hit exactly
// 1/sqrt(2) at the requested band edges. Each section carries zeros at
// z = +1 and z = -1 (b = [1, 0, -1]); the scalar pass-band gain lives in
// IirCascade::gain and normalizes the response to 1 at the geometric band
// center.
//
// filtfilt mirrors the conventional zero-phase recipe: odd-reflection
// padding of length 3 * (2 * order + 1), a forward pass seeded with the
// steady-state initial conditions scaled by the first padded sample, a
// reverse pass seeded the same way, then trimming.

#include "imago/common.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace imago {

struct BandpassSpec {
  int order = 3;
  double low_hz = 0.1;
  double high_hz = 8.0;
  double sample_rate_hz = 0.0;
};

/// One biquad: H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

struct IirCascade {
  std::vector<Biquad> sections;
  double gain = 1.0;

  int order() const { return static_cast<int>(sections.size()); }
};

/// Complex frequency response at digital radian frequency w (0..pi).
inline std::complex<double> cascade_response(const IirCascade& f, double w) {
  const std::complex<double> z1 = std::polar(1.0, -w);   // z^-1
  const std::complex<double> z2 = z1 * z1;
  std::complex<double> h = f.gain;
  for (const Biquad& s : f.sections)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

inline double cascade_magnitude(const IirCascade& f, double freq_hz, double sample_rate_hz) {
  return std::abs(cascade_response(f, 2.0 * std::numbers::pi * freq_hz / sample_rate_hz));
}

/// All poles of the cascade (2 per section).
inline std::vector<std::complex<double>> cascade_poles(const IirCascade& f) {
  std::vector<std::complex<double>> out;
  for (const Biquad& s : f.sections) {
    const std::complex<double> disc =
        std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
    out.push_back((-s.a1 + disc) / 2.0);
    out.push_back((-s.a1 - disc) / 2.0);
  }
  return out;
}

inline bool cascade_is_stable(const IirCascade& f) {
  for (const auto& p : cascade_poles(f))
    if (std::abs(p) >= 1.0) return false;
  return true;
}

/// Designs a Butterworth bandpass as a cascade of `order` biquads.
inline IirCascade design_bandpass(const BandpassSpec& spec) {
  require(spec.order >= 1, "bandpass order must be >= 1");
  require(spec.sample_rate_hz > 0.0, "bandpass sample rate must be positive");
  require(spec.low_hz > 0.0, "bandpass low edge must be positive");
  require(spec.high_hz > spec.low_hz, "bandpass high edge must exceed the low edge");
  require(spec.high_hz < spec.sample_rate_hz / 2.0,
          "bandpass high edge must be below the Nyquist frequency");

  using C = std::complex<double>;
  const double fs2 = 2.0 * spec.sample_rate_hz;  // bilinear constant
  const double pi = std::numbers::pi;

  // Prewarped analog band edges, center, and width.
  const double w1 = fs2 * std::tan(pi * spec.low_hz / spec.sample_rate_hz);
  const double w2 = fs2 * std::tan(pi * spec.high_hz / spec.sample_rate_hz);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  // Analog lowpass prototype poles on the unit circle, left half-plane.
  std::vector<C> proto;
  for (int k = 0; k < spec.order; ++k) {
    const double theta = pi * (2.0 * k + spec.order + 1.0) / (2.0 * spec.order);
    proto.emplace_back(std::cos(theta), std::sin(theta));
  }

  // Lowpass -> bandpass: each prototype pole p yields two analog poles.
  std::vector<C> analog;
  for (const C& p : proto) {
    const C pb = p * (bw / 2.0);
    const C disc = std::sqrt(pb * pb - w0 * w0);
    analog.push_back(pb + disc);
    analog.push_back(pb - disc);
  }

  // Bilinear transform of the poles.
  std::vector<C> digital;
  for (const C& s : analog) digital.push_back((fs2 + s) / (fs2 - s));

  // Group into conjugate pairs (plus real pairs for odd-order leftovers).
  const double imag_tol = 1e-12;
  std::vector<C> upper, real_poles;
  for (const C& p : digital) {
    if (p.imag() > imag_tol) upper.push_back(p);
    else if (p.imag() < -imag_tol) continue;  // conjugate partner carries it
    else real_poles.push_back(C(p.real(), 0.0));
  }
  std::sort(upper.begin(), upper.end(), [](const C& a, const C& b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  std::sort(real_poles.begin(), real_poles.end(),
            [](const C& a, const C& b) { return a.real() < b.real(); });
  require(real_poles.size() % 2 == 0, "bandpass design: unpaired real pole");

  IirCascade f;
  for (const C& p : upper) {
    Biquad s;
    s.b0 = 1.0; s.b1 = 0.0; s.b2 = -1.0;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    f.sections.push_back(s);
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    Biquad s;
    s.b0 = 1.0; s.b1 = 0.0; s.b2 = -1.0;
    s.a1 = -(real_poles[i].real() + real_poles[i + 1].real());
    s.a2 = real_poles[i].real() * real_poles[i + 1].real();
    f.sections.push_back(s);
  }
  require(f.order() == spec.order, "bandpass design: wrong section count");

  // Normalize to unit gain at the digital image of the analog band center.
  const double w_center = 2.0 * std::atan(w0 / fs2);
  f.gain = 1.0;
  const double peak = std::abs(cascade_response(f, w_center));
  require(peak > 0.0 && std::isfinite(peak), "bandpass design: degenerate peak gain");
  f.gain = 1.0 / peak;

  require(cascade_is_stable(f), "bandpass design produced an unstable filter");
  return f;
}

namespace detail {

/// Steady-state initial conditions per section for a unit-amplitude constant
/// input, transposed direct form II. Multiply by the actual first input
/// sample before use. `scale` tracks the DC gain of upstream sections.
inline std::vector<std::array<double, 2>> steady_state_zi(const IirCascade& f) {
  std::vector<std::array<double, 2>> zi(f.sections.size());
  double scale = f.gain;
  for (std::size_t k = 0; k < f.sections.size(); ++k) {
    const Biquad& s = f.sections[k];
    const double denom = 1.0 + s.a1 + s.a2;
    require(denom != 0.0, "steady_state_zi: pole at z = 1");
    const double h_dc = (s.b0 + s.b1 + s.b2) / denom;
    zi[k][0] = scale * (s.b1 + s.b2 - (s.a1 + s.a2) * h_dc);
    zi[k][1] = scale * (s.b2 - s.a2 * h_dc);
    scale *= h_dc;
  }
  return zi;
}

}  // namespace detail

/// Single forward pass through the cascade (transposed direct form II).
/// When zi_scale is non-null, each section starts from its steady state for
/// a constant input of *zi_scale; otherwise from rest.
inline Vector sosfilt(const IirCascade& f, const Vector& x, const double* zi_scale = nullptr) {
  require(!f.sections.empty(), "sosfilt: empty cascade");
  std::vector<std::array<double, 2>> z(f.sections.size(), {0.0, 0.0});
  if (zi_scale != nullptr) {
    z = detail::steady_state_zi(f);
    for (auto& s : z) {
      s[0] *= *zi_scale;
      s[1] *= *zi_scale;
    }
  }
  Vector y = f.gain * x;
  for (std::size_t k = 0; k < f.sections.size(); ++k) {
    const Biquad& s = f.sections[k];
    double z1 = z[k][0], z2 = z[k][1];
    for (Index n = 0; n < y.size(); ++n) {
      const double xn = y[n];
      const double yn = s.b0 * xn + z1;
      z1 = s.b1 * xn - s.a1 * yn + z2;
      z2 = s.b2 * xn - s.a2 * yn;
      y[n] = yn;
    }
  }
  return y;
}

/// Default padding length for filtfilt: 3 * (2 * order + 1).
inline Index filtfilt_padlen(const IirCascade& f) {
  return 3 * (2 * static_cast<Index>(f.sections.size()) + 1);
}

/// Zero-phase forward-backward filtering with odd-reflection padding.
/// Requires the signal to be longer than the padding.
inline Vector filtfilt(const IirCascade& f, const Vector& x, Index padlen = -1) {
  if (padlen < 0) padlen = filtfilt_padlen(f);
  const Index t = x.size();
  require(t > padlen, "filtfilt: signal length " + std::to_string(t) +
                          " must exceed the padding length " + std::to_string(padlen));

  Vector ext(t + 2 * padlen);
  for (Index i = 0; i < padlen; ++i) ext[i] = 2.0 * x[0] - x[padlen - i];
  ext.segment(padlen, t) = x;
  for (Index i = 0; i < padlen; ++i) ext[padlen + t + i] = 2.0 * x[t - 1] - x[t - 2 - i];

  const double x0 = ext[0];
  Vector fwd = sosfilt(f, ext, &x0);
  std::reverse(fwd.data(), fwd.data() + fwd.size());
  const double y0 = fwd[0];
  Vector bwd = sosfilt(f, fwd, &y0);
  std::reverse(bwd.data(), bwd.data() + bwd.size());
  return bwd.segment(padlen, t);
}

/// Applies filtfilt to every row of a channels x samples matrix.
inline Matrix filtfilt_rows(const IirCascade& f, const Matrix& data, Index padlen = -1) {
  Matrix out(data.rows(), data.cols());
  for (Index c = 0; c < data.rows(); ++c)
    out.row(c) = filtfilt(f, data.row(c).transpose(), padlen).transpose();
  return out;
}

}  // namespace imago
