#pragma once

#include <Eigen/Dense>

#include "itgap/sparse_operator.hpp"

namespace itgap {

/// Dense-path guardrail for eigendecompositions.
inline constexpr std::size_t kDenseCap = std::size_t{1} << 12;

inline Eigen::MatrixXcd to_dense(const SparseOperator<double>& op) {
  const auto n = static_cast<Eigen::Index>(op.dim());
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(n, n);
  for (std::size_t r = 0; r < op.dim(); ++r) {
    for (const auto& e : op.row(r)) m(Eigen::Index(r), Eigen::Index(e.col)) = e.value;
  }
  return m;
}

template <class Real>
Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic> to_dense_as(const SparseOperator<Real>& op) {
  const auto n = static_cast<Eigen::Index>(op.dim());
  Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic> m(n, n);
  m.setZero();
  for (std::size_t r = 0; r < op.dim(); ++r) {
    for (const auto& e : op.row(r)) m(Eigen::Index(r), Eigen::Index(e.col)) = e.value;
  }
  return m;
}

inline SparseOperator<double> from_dense(const Eigen::MatrixXcd& m, double drop_tol = 0.0) {
  if (m.rows() != m.cols()) throw DimensionError("from_dense: matrix is not square");
  std::vector<Triplet<double>> t;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != std::complex<double>{}) {
        t.push_back({std::size_t(r), std::size_t(c), m(r, c)});
      }
    }
  }
  return SparseOperator<double>::from_triplets(std::size_t(m.rows()), std::move(t), drop_tol);
}

}  // namespace itgap
