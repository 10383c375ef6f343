#pragma once

// Covariance PCA on mean-centered (unscaled) feature matrices.
//
// The eigenproblem is solved on whichever is smaller: the d x d sample
// covariance or the n x n Gram matrix. In the Gram route each eigenvector u
// of X X^T / (n-1) with eigenvalue l maps to the component X^T u / sqrt((n-1) l).

#include <cmath>
#include <cstddef>

#include <Eigen/Eigenvalues>

#include "servicemonitor/error.hpp"
#include "servicemonitor/matrix.hpp"

namespace servicemonitor {

struct PcaModel {
  Vector mean;                 ///< length d
  RowMatrix components;        ///< k x d, orthonormal rows, variance-descending
  Vector explained_variance;   ///< length k, non-increasing

  std::size_t k() const noexcept { return static_cast<std::size_t>(components.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(mean.size()); }
};

/// Eigenvalues at or below this fraction of the largest are treated as rank loss.
inline constexpr double kPcaRankTolerance = 1e-10;

namespace detail {

/// Two passes of modified Gram-Schmidt over the rows, in order.
inline void orthonormalize_rows(RowMatrix& m) {
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < i; ++j) m.row(i) -= m.row(i).dot(m.row(j)) * m.row(j);
      m.row(i) /= m.row(i).norm();
    }
  }
}

/// Largest-magnitude coordinate made positive; ties go to the lowest index.
inline void canonical_signs(RowMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double a = std::abs(m(i, c));
      if (a > best) {
        best = a;
        arg = c;
      }
    }
    if (m(i, arg) < 0.0) m.row(i) = -m.row(i);
  }
}

}  // namespace detail

inline PcaModel fit_pca(const RowMatrix& data, std::size_t k) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2) throw Error(ErrorKind::kInsufficientData, "PCA needs at least 2 samples, got " + std::to_string(n));
  if (d < 1) throw Error(ErrorKind::kShape, "PCA needs at least one column");
  if (k < 1) throw Error(ErrorKind::kDomain, "PCA needs k >= 1");
  if (!data.allFinite()) throw Error(ErrorKind::kDomain, "PCA input contains non-finite entries");

  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  const RowMatrix centered = data.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  const bool gram_route = d > n;
  Eigen::MatrixXd sym = gram_route ? Eigen::MatrixXd(centered * centered.transpose() / denom)
                                   : Eigen::MatrixXd(centered.transpose() * centered / denom);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::kDomain, "eigendecomposition did not converge");

  // Eigen orders ascending; walk from the top.
  const Eigen::VectorXd& values = solver.eigenvalues();
  const Eigen::Index m = values.size();
  const double top = values(m - 1);
  Eigen::Index rank = 0;
  if (top > 0.0) {
    while (rank < m && values(m - 1 - rank) > kPcaRankTolerance * top) ++rank;
  }
  rank = std::min<Eigen::Index>(rank, std::min<Eigen::Index>(d, n - 1));
  const Eigen::Index keep = std::min<Eigen::Index>(rank, static_cast<Eigen::Index>(k));
  if (keep == 0) throw Error(ErrorKind::kInsufficientData, "data has zero variance; no principal component exists");

  model.components.resize(keep, d);
  model.explained_variance.resize(keep);
  for (Eigen::Index i = 0; i < keep; ++i) {
    const Eigen::Index src = m - 1 - i;
    const double lambda = values(src);
    model.explained_variance(i) = lambda;
    if (gram_route) {
      model.components.row(i) =
          (centered.transpose() * solver.eigenvectors().col(src)).transpose() / std::sqrt(denom * lambda);
    } else {
      model.components.row(i) = solver.eigenvectors().col(src).transpose();
    }
  }
  detail::orthonormalize_rows(model.components);
  detail::canonical_signs(model.components);
  return model;
}

/// scores = (data - mean) * components^T
inline RowMatrix transform(const PcaModel& model, const RowMatrix& data) {
  if (static_cast<std::size_t>(data.cols()) != model.d()) {
    throw Error(ErrorKind::kShape, "PCA expects " + std::to_string(model.d()) + " columns, got " +
                                       std::to_string(data.cols()));
  }
  return (data.rowwise() - model.mean.transpose()) * model.components.transpose();
}

/// mean + scores * components
inline RowMatrix reconstruct(const PcaModel& model, const RowMatrix& scores) {
  if (static_cast<std::size_t>(scores.cols()) != model.k()) {
    throw Error(ErrorKind::kShape, "expected " + std::to_string(model.k()) + " score columns");
  }
  RowMatrix out = scores * model.components;
  out.rowwise() += model.mean.transpose();
  return out;
}

}  // namespace servicemonitor
