#pragma once

// Denoising source separation (DSS).
//
// Components are ranked by cross-trial consistency: whiten with the pooled
// covariance of all trials, then eigendecompose the covariance of the
// per-condition trial averages in whitened space. Eigenvalues measure the
// fraction of a component's power that survives averaging (0..1). Keeping
// the top n components and projecting back to sensor space yields a rank-n
// denoising projection.

#include "imago/common.hpp"
#include "imago/trial.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <vector>

namespace imago {

struct DssModel {
  Matrix whitener;   ///< K x C, K = numerical rank of the pooled covariance
  Matrix rotation;   ///< K x K eigenvectors of the whitened bias covariance
  Vector scores;     ///< K consistency scores, non-increasing, in [0, 1]
  Matrix unmixer;    ///< n_keep x C: sensor data -> kept source time courses
  Matrix remixer;    ///< C x n_keep: kept sources -> sensor space
  Vector channel_mean;  ///< per-channel mean used for centering at fit time
  int n_keep = 0;
  int rank = 0;
};

/// Fits DSS on all trials of one subject. The bias average is taken within
/// condition groups; only conditions with at least two repetitions
/// contribute to the bias covariance (an unrepeated condition would only
/// echo raw power). Throws if the pooled covariance has numerical rank
/// below n_keep.
inline DssModel fit_dss(const SubjectDataset& subject, int n_keep = 7,
                        double rank_tolerance = 1e-10) {
  subject.validate();
  require(n_keep >= 1, "fit_dss: n_keep must be >= 1");
  require(rank_tolerance > 0.0, "fit_dss: rank tolerance must be positive");
  const Index c = subject.channels();
  const Index t = subject.trials.front().samples();

  // Pooled channel means, then pooled covariance of all trials.
  const double n_total = static_cast<double>(subject.trials.size()) * static_cast<double>(t);
  Vector mean = Vector::Zero(c);
  for (const auto& tr : subject.trials) mean += tr.data.rowwise().sum();
  mean /= n_total;

  Matrix c0 = Matrix::Zero(c, c);
  for (const auto& tr : subject.trials) {
    const Matrix x = tr.data.colwise() - mean;
    c0.noalias() += x * x.transpose();
  }
  c0 /= n_total;

  // Bias covariance from per-condition averages (>= 2 repetitions).
  Matrix c1 = Matrix::Zero(c, c);
  double n_bias = 0.0;
  int n_groups = 0;
  for (const ConditionLabel cond : all_conditions()) {
    const auto idx = subject.trial_indices(cond);
    if (idx.size() < 2) continue;
    Matrix avg = Matrix::Zero(c, t);
    for (int i : idx) avg += subject.trials[static_cast<std::size_t>(i)].data;
    avg /= static_cast<double>(idx.size());
    avg.colwise() -= mean;
    c1.noalias() += avg * avg.transpose();
    n_bias += static_cast<double>(t);
    ++n_groups;
  }
  require(n_groups >= 1, "fit_dss: no condition has at least 2 repetitions");
  c1 /= n_bias;

  // Whitener from the pooled covariance, truncated at the numerical rank.
  Eigen::SelfAdjointEigenSolver<Matrix> es0(c0);
  require(es0.info() == Eigen::Success, "fit_dss: eigendecomposition failed");
  const Vector evals = es0.eigenvalues();  // ascending
  const double lmax = evals[c - 1];
  require(lmax > 0.0, "fit_dss: data has zero power");
  int rank = 0;
  for (Index i = 0; i < c; ++i)
    if (evals[i] > rank_tolerance * lmax) ++rank;
  require(rank >= n_keep, "fit_dss: covariance rank " + std::to_string(rank) +
                              " is below n_keep = " + std::to_string(n_keep));

  DssModel m;
  m.n_keep = n_keep;
  m.rank = rank;
  m.channel_mean = mean;
  m.whitener = Matrix(rank, c);
  Matrix color(c, rank);  // inverse of the whitener on its range
  for (int k = 0; k < rank; ++k) {
    const Index src = c - 1 - k;  // descending eigenvalue order
    const double s = std::sqrt(evals[src]);
    m.whitener.row(k) = es0.eigenvectors().col(src).transpose() / s;
    color.col(k) = es0.eigenvectors().col(src) * s;
  }

  // Consistency eigendecomposition in whitened space.
  const Matrix c1w = m.whitener * c1 * m.whitener.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es1(c1w);
  require(es1.info() == Eigen::Success, "fit_dss: eigendecomposition failed");

  m.rotation = Matrix(rank, rank);
  m.scores = Vector(rank);
  for (int k = 0; k < rank; ++k) {
    const Index src = rank - 1 - k;
    Vector u = es1.eigenvectors().col(src);
    // Deterministic sign: largest-magnitude entry positive.
    Index imax = 0;
    u.cwiseAbs().maxCoeff(&imax);
    if (u[imax] < 0.0) u = -u;
    m.rotation.col(k) = u;
    m.scores[k] = std::clamp(es1.eigenvalues()[src], 0.0, 1.0);
  }

  m.unmixer = m.rotation.leftCols(n_keep).transpose() * m.whitener;  // n_keep x C
  m.remixer = color * m.rotation.leftCols(n_keep);                   // C x n_keep
  return m;
}

/// Extracts the kept source time courses from sensor data.
inline Matrix dss_sources(const DssModel& m, const Matrix& data) {
  require(data.rows() == m.unmixer.cols(), "dss_sources: channel count mismatch");
  return m.unmixer * data;
}

/// Rank-n_keep denoising: project onto the kept components and back to
/// sensor space. Linear, hence idempotent: apply_dss(m, apply_dss(m, x))
/// equals apply_dss(m, x) up to roundoff.
inline Matrix apply_dss(const DssModel& m, const Matrix& data) {
  require(data.rows() == m.remixer.rows(), "apply_dss: channel count mismatch");
  return m.remixer * (m.unmixer * data);
}

}  // namespace imago
