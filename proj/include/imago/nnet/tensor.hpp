#pragma once

// Minimal batched tensor for the encoder-decoder: a batch of channels x time
// matrices in 64-bit precision, with an optional gradient buffer of the same
// shape. The singleton spatial axis of the conventional (C, 1, T) layout is
// absorbed into (batch, channels, time).

#include <imago/common.hpp>

#include <vector>

namespace imago::nnet {

struct Tensor3 {
  std::vector<Matrix> values;  ///< one channels x time matrix per batch item
  std::vector<Matrix> grad;    ///< empty, or shape-equal to values

  Tensor3() = default;
  explicit Tensor3(std::vector<Matrix> v) : values(std::move(v)) { validate(); }

  Index batch() const { return static_cast<Index>(values.size()); }
  Index channels() const { return values.empty() ? 0 : values.front().rows(); }
  Index time() const { return values.empty() ? 0 : values.front().cols(); }

  bool has_grad() const { return !grad.empty(); }

  void validate() const {
    require(!values.empty(), "tensor: batch must be non-empty");
    for (const Matrix& m : values) {
      require(m.rows() == values.front().rows() && m.cols() == values.front().cols(),
              "tensor: batch items must share one shape");
      require(m.allFinite(), "tensor: values must be finite");
    }
    if (!grad.empty()) {
      require(grad.size() == values.size(), "tensor: gradient batch mismatch");
      for (std::size_t i = 0; i < grad.size(); ++i)
        require(grad[i].rows() == values[i].rows() && grad[i].cols() == values[i].cols(),
                "tensor: gradient shape mismatch");
    }
  }

  /// Allocates (or re-zeroes) the gradient buffer.
  void zero_grad() {
    grad.assign(values.size(), Matrix());
    for (std::size_t i = 0; i < values.size(); ++i)
      grad[i] = Matrix::Zero(values[i].rows(), values[i].cols());
  }
};

/// A zero tensor with the same shape as the reference.
inline Tensor3 zeros_like(const Tensor3& ref) {
  Tensor3 out;
  out.values.reserve(ref.values.size());
  for (const Matrix& m : ref.values) out.values.push_back(Matrix::Zero(m.rows(), m.cols()));
  return out;
}

}  // namespace imago::nnet
