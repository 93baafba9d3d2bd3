#pragma once

// Building blocks of the encoder-decoder: same-padded 1-D convolution over
// the time axis (stride 1), ReLU, and inverted dropout. Each layer caches
// what its backward pass needs; backward accumulates parameter gradients and
// returns the gradient with respect to the layer input.

#include <imago/common.hpp>
#include <imago/nnet/tensor.hpp>
#include <imago/rng.hpp>

#include <cmath>
#include <vector>

namespace imago::nnet {

/// 1-D convolution (cross-correlation) along time with zero same-padding and
/// stride 1: out[:, t] = bias + sum_tap kernel[tap] * in[:, t + tap - k/2].
/// The kernel is stored as k taps of out_ch x in_ch matrices so each tap is
/// one matrix product over the overlapping time range.
struct Conv1dLayer {
  std::vector<Matrix> taps;  ///< k matrices, each out_ch x in_ch
  Vector bias;               ///< out_ch

  std::vector<Matrix> tap_grad;
  Vector bias_grad;

  Conv1dLayer() = default;

  /// Fan-in initialization: centered uniform scaled by 1/sqrt(in_ch * k),
  /// zero bias.
  Conv1dLayer(Index out_ch, Index in_ch, Index k, Rng& rng) {
    require(out_ch >= 1 && in_ch >= 1, "conv: channel counts must be positive");
    require(k >= 1 && k % 2 == 1, "conv: kernel size must be odd and positive");
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_ch * k));
    taps.reserve(static_cast<std::size_t>(k));
    for (Index tap = 0; tap < k; ++tap) {
      Matrix w(out_ch, in_ch);
      for (Index j = 0; j < in_ch; ++j)
        for (Index i = 0; i < out_ch; ++i) w(i, j) = (2.0 * rng.uniform() - 1.0) * scale;
      taps.push_back(std::move(w));
    }
    bias = Vector::Zero(out_ch);
    zero_grad();
  }

  Index out_channels() const { return taps.front().rows(); }
  Index in_channels() const { return taps.front().cols(); }
  Index kernel_size() const { return static_cast<Index>(taps.size()); }

  /// Zeroes gradients without reallocating their storage (optimizer slots
  /// hold raw pointers into these buffers, so addresses must stay stable).
  void zero_grad() {
    if (tap_grad.size() != taps.size()) tap_grad.resize(taps.size());
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (tap_grad[i].rows() != taps[i].rows() || tap_grad[i].cols() != taps[i].cols())
        tap_grad[i].resize(taps[i].rows(), taps[i].cols());
      tap_grad[i].setZero();
    }
    if (bias_grad.size() != bias.size()) bias_grad.resize(bias.size());
    bias_grad.setZero();
  }

  void validate() const {
    require(!taps.empty() && taps.size() % 2 == 1, "conv: kernel size must be odd");
    for (const Matrix& w : taps) {
      require(w.rows() == taps.front().rows() && w.cols() == taps.front().cols(),
              "conv: taps must share one shape");
      require(w.allFinite(), "conv: kernel must be finite");
    }
    require(bias.size() == taps.front().rows(), "conv: bias length mismatch");
    require(bias.allFinite(), "conv: bias must be finite");
  }

  /// Overlap of tap index `tap` on a length-t signal: output columns
  /// [out_start, out_start+len) read input columns [in_start, in_start+len).
  struct TapSpan {
    Index out_start, in_start, len;
  };
  TapSpan tap_span(Index tap, Index t) const {
    const Index h = kernel_size() / 2;
    const Index shift = tap - h;  // input column = output column + shift
    TapSpan s;
    s.out_start = std::max<Index>(0, -shift);
    s.in_start = std::max<Index>(0, shift);
    s.len = std::max<Index>(0, t - std::abs(shift));
    return s;
  }

  Matrix forward_one(const Matrix& x) const {
    require(x.rows() == in_channels(), "conv: input channel mismatch");
    const Index t = x.cols();
    Matrix y = bias.replicate(1, t);
    for (Index tap = 0; tap < kernel_size(); ++tap) {
      const TapSpan s = tap_span(tap, t);
      if (s.len <= 0) continue;
      y.middleCols(s.out_start, s.len).noalias() +=
          taps[static_cast<std::size_t>(tap)] * x.middleCols(s.in_start, s.len);
    }
    return y;
  }

  /// Accumulates tap/bias gradients from (x, dy) and returns dL/dx.
  Matrix backward_one(const Matrix& x, const Matrix& dy) {
    require(dy.rows() == out_channels() && dy.cols() == x.cols(),
            "conv: output gradient shape mismatch");
    const Index t = x.cols();
    Matrix dx = Matrix::Zero(x.rows(), t);
    for (Index tap = 0; tap < kernel_size(); ++tap) {
      const TapSpan s = tap_span(tap, t);
      if (s.len <= 0) continue;
      tap_grad[static_cast<std::size_t>(tap)].noalias() +=
          dy.middleCols(s.out_start, s.len) * x.middleCols(s.in_start, s.len).transpose();
      dx.middleCols(s.in_start, s.len).noalias() +=
          taps[static_cast<std::size_t>(tap)].transpose() * dy.middleCols(s.out_start, s.len);
    }
    bias_grad += dy.rowwise().sum();
    return dx;
  }
};

inline Tensor3 conv1d_forward(const Conv1dLayer& layer, const Tensor3& x) {
  layer.validate();
  x.validate();
  Tensor3 y;
  y.values.reserve(x.values.size());
  for (const Matrix& m : x.values) y.values.push_back(layer.forward_one(m));
  return y;
}

struct ReluLayer {
  Matrix forward_one(const Matrix& x) { return x.cwiseMax(0.0); }
  /// dL/dx from the cached input and dL/dy.
  static Matrix backward_one(const Matrix& x, const Matrix& dy) {
    return (x.array() > 0.0).cast<double>().matrix().cwiseProduct(dy);
  }
};

/// Inverted dropout: in train mode each entry is zeroed with probability p
/// and survivors are scaled by 1/(1-p); evaluation mode is the identity, as
/// is train mode with p = 0.
struct DropoutLayer {
  double p = 0.1;

  void validate() const { require(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)"); }

  /// Returns the mask applied (all-ones in eval mode or with p = 0).
  Matrix forward_one(const Matrix& x, bool train, Rng& rng, Matrix* y) const {
    validate();
    if (!train || p == 0.0) {
      *y = x;
      return Matrix::Ones(x.rows(), x.cols());
    }
    Matrix mask(x.rows(), x.cols());
    const double keep_scale = 1.0 / (1.0 - p);
    for (Index j = 0; j < x.cols(); ++j)
      for (Index i = 0; i < x.rows(); ++i) mask(i, j) = rng.uniform() < p ? 0.0 : keep_scale;
    *y = x.cwiseProduct(mask);
    return mask;
  }

  static Matrix backward_one(const Matrix& mask, const Matrix& dy) {
    return mask.cwiseProduct(dy);
  }
};

}  // namespace imago::nnet
