#pragma once

// Thin wrapper over Eigen's FFT module (kissfft backend): real forward
// transforms, inverse transforms, and spectrum helpers shared by the
// synthesis and loss code.

#include "imago/common.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

namespace imago {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;

/// Full-length DFT of a real signal (unnormalized, X[k] = sum x[t] w^{-kt}).
inline ComplexVector fft_forward(const Vector& x) {
  Eigen::FFT<double> fft;
  std::vector<Complex> out;
  std::vector<double> in(x.data(), x.data() + x.size());
  fft.fwd(out, in);
  ComplexVector r(static_cast<Index>(out.size()));
  for (Index i = 0; i < r.size(); ++i) r[i] = out[static_cast<std::size_t>(i)];
  return r;
}

/// Inverse DFT scaled by 1/T; returns the real part (callers pass
/// conjugate-symmetric spectra, the imaginary part is roundoff).
inline Vector fft_inverse_real(const ComplexVector& spectrum) {
  Eigen::FFT<double> fft;
  std::vector<Complex> in(spectrum.data(), spectrum.data() + spectrum.size());
  std::vector<Complex> out;
  fft.inv(out, in);
  Vector r(static_cast<Index>(out.size()));
  for (Index i = 0; i < r.size(); ++i)
    r[i] = out[static_cast<std::size_t>(i)].real();
  return r;
}

/// Enforces X[T-k] = conj(X[k]) in place so the inverse transform is real.
/// Bins 0 and T/2 (when T even) are forced real.
inline void make_conjugate_symmetric(ComplexVector& spectrum) {
  const Index t = spectrum.size();
  if (t == 0) return;
  spectrum[0] = Complex(spectrum[0].real(), 0.0);
  if (t % 2 == 0) spectrum[t / 2] = Complex(spectrum[t / 2].real(), 0.0);
  for (Index k = 1; k < (t + 1) / 2; ++k)
    spectrum[t - k] = std::conj(spectrum[k]);
}

}  // namespace imago
