#pragma once

// Composite training loss: sum of squared errors, negative Pearson
// correlation per (trial, channel) time course, squared error of first
// temporal differences, and squared error of one-sided FFT magnitudes, each
// summed over the batch and combined as
//   total = mse + alpha * corr + beta * temp + gamma * spec.
// All gradients are analytic; the spectral gradient uses the adjoint DFT
// evaluated by an inverse FFT.

#include <imago/common.hpp>
#include <imago/nnet/tensor.hpp>

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <vector>

namespace imago::nnet {

struct LossWeights {
  double alpha = 1.0;    ///< negative-correlation weight
  double beta = 0.5;     ///< temporal-difference weight
  double gamma = 0.1;    ///< spectral-magnitude weight
  double epsilon = 1e-8; ///< denominator / magnitude guard

  void validate() const {
    require(std::isfinite(alpha) && alpha >= 0.0, "loss: alpha must be finite and >= 0");
    require(std::isfinite(beta) && beta >= 0.0, "loss: beta must be finite and >= 0");
    require(std::isfinite(gamma) && gamma >= 0.0, "loss: gamma must be finite and >= 0");
    require(std::isfinite(epsilon) && epsilon > 0.0, "loss: epsilon must be positive");
  }
};

/// The correlation term's denominator convention. `Pearson` is the standard
/// coefficient (product of centered norms, epsilon-guarded). `SquaredNorms`
/// divides by the product of squared norms instead; it is kept selectable
/// because the two conventions disagree in scale while the surrounding text
/// describes a scale-free alignment term.
enum class CorrDenominator { Pearson, SquaredNorms };

struct LossTerms {
  double mse = 0.0;
  double corr = 0.0;
  double temp = 0.0;
  double spec = 0.0;
  double total = 0.0;
};

namespace detail {

/// One-sided FFT magnitudes sqrt(re^2 + im^2 + eps) of a real row.
inline Vector spectral_magnitudes(const Vector& row, double eps,
                                  Eigen::FFT<double>& fft,
                                  std::vector<std::complex<double>>* spectrum) {
  const Index t = row.size();
  std::vector<std::complex<double>> input(static_cast<std::size_t>(t));
  for (Index i = 0; i < t; ++i) input[static_cast<std::size_t>(i)] = {row[i], 0.0};
  fft.fwd(*spectrum, input);
  const Index half = t / 2 + 1;
  Vector mags(half);
  for (Index f = 0; f < half; ++f) {
    const auto& y = (*spectrum)[static_cast<std::size_t>(f)];
    mags[f] = std::sqrt(y.real() * y.real() + y.imag() * y.imag() + eps);
  }
  return mags;
}

}  // namespace detail

/// Loss terms and, when `grad` is non-null, the gradient with respect to
/// `pred` (accumulated into a freshly zeroed tensor stored in *grad).
inline LossTerms loss_with_grad(const Tensor3& pred, const Tensor3& target,
                                const LossWeights& weights, Tensor3* grad,
                                CorrDenominator denom = CorrDenominator::Pearson) {
  weights.validate();
  pred.validate();
  target.validate();
  require(pred.batch() == target.batch() && pred.channels() == target.channels() &&
              pred.time() == target.time(),
          "loss: pred and target shapes must match");
  require(pred.time() >= 2, "loss: need at least 2 time samples");

  if (grad != nullptr) *grad = zeros_like(pred);

  const double eps = weights.epsilon;
  LossTerms out;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spectrum, target_spectrum, adjoint_in, adjoint_out;

  for (Index b = 0; b < pred.batch(); ++b) {
    const Matrix& p = pred.values[static_cast<std::size_t>(b)];
    const Matrix& y = target.values[static_cast<std::size_t>(b)];
    Matrix* g = grad ? &grad->values[static_cast<std::size_t>(b)] : nullptr;
    const Index t = p.cols();

    for (Index ch = 0; ch < p.rows(); ++ch) {
      const Vector pr = p.row(ch).transpose();
      const Vector yr = y.row(ch).transpose();
      Vector grow = Vector::Zero(t);

      // Sum of squared errors.
      const Vector diff = pr - yr;
      out.mse += diff.squaredNorm();
      if (g) grow += 2.0 * diff;

      // Negative correlation with guarded denominator.
      const Vector pc = pr.array() - pr.mean();
      const Vector yc = yr.array() - yr.mean();
      const double s = pc.dot(yc);
      const double np = pc.norm();
      const double ny = yc.norm();
      const double d =
          denom == CorrDenominator::Pearson ? np * ny + eps : np * np * ny * ny + eps;
      const double r = s / d;
      out.corr -= r;
      if (g) {
        // dr/dp through the centering projector: both addends below are
        // already mean-free, so the projector is a no-op on them. The term
        // enters the total as +alpha * (-r), hence the -alpha factor.
        Vector dr = yc / d;
        if (np > 0.0) {
          const double dd_scale =
              denom == CorrDenominator::Pearson ? ny / np : 2.0 * ny * ny;
          dr -= (s * dd_scale / (d * d)) * pc;
        }
        grow -= weights.alpha * dr;
      }

      // First-difference (temporal smoothness) term.
      for (Index tau = 0; tau + 1 < t; ++tau) {
        const double dd = (pr[tau + 1] - pr[tau]) - (yr[tau + 1] - yr[tau]);
        out.temp += dd * dd;
        if (g) {
          grow[tau + 1] += weights.beta * 2.0 * dd;
          grow[tau] -= weights.beta * 2.0 * dd;
        }
      }

      // Spectral magnitude term over one-sided FFT bins.
      const Vector pm = detail::spectral_magnitudes(pr, eps, fft, &spectrum);
      const Vector ym = detail::spectral_magnitudes(yr, eps, fft, &target_spectrum);
      const Vector md = pm - ym;
      out.spec += md.squaredNorm();
      if (g) {
        const Index half = t / 2 + 1;
        adjoint_in.assign(static_cast<std::size_t>(t), {0.0, 0.0});
        for (Index f = 0; f < half; ++f) {
          const auto& yf = spectrum[static_cast<std::size_t>(f)];
          const double w = 2.0 * md[f] / pm[f];
          adjoint_in[static_cast<std::size_t>(f)] = {w * yf.real(), w * yf.imag()};
        }
        fft.inv(adjoint_out, adjoint_in);
        for (Index tau = 0; tau < t; ++tau)
          grow[tau] += weights.gamma * static_cast<double>(t) *
                       adjoint_out[static_cast<std::size_t>(tau)].real();
      }

      if (g) g->row(ch) += grow.transpose();
    }
  }

  out.total = out.mse + weights.alpha * out.corr + weights.beta * out.temp +
              weights.gamma * out.spec;
  return out;
}

/// Loss values only.
inline LossTerms loss_terms(const Tensor3& pred, const Tensor3& target,
                            const LossWeights& weights,
                            CorrDenominator denom = CorrDenominator::Pearson) {
  return loss_with_grad(pred, target, weights, nullptr, denom);
}

}  // namespace imago::nnet
