#pragma once

#include <string>

#include <Eigen/Dense>

#include "kmetric/error.hpp"

namespace kmetric {

/// Eigenvalues in ascending order with matching unit eigenvectors as columns.
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

/// Eigendecomposition of the symmetric matrix whose lower triangle is stored
/// in `X`; the strict upper triangle is ignored.
inline SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& X) {
  if (X.rows() != X.cols()) throw InputError("symmetric_eigen: matrix must be square");
  const Eigen::Index n = X.rows();
  SymmetricEigen out;
  if (n == 0) {
    out.values.resize(0);
    out.vectors.resize(0, 0);
    return out;
  }
  if (!X.triangularView<Eigen::Lower>().toDenseMatrix().allFinite()) {
    throw NumericError("symmetric_eigen: matrix has non-finite entries (n=" + std::to_string(n) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X);
  if (es.info() != Eigen::Success) {
    throw NumericError("symmetric eigensolver did not converge (n=" + std::to_string(n) + ", QR iteration limit " +
                       std::to_string(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>::m_maxIterations * n) + ")");
  }
  out.values = es.eigenvalues();
  out.vectors = es.eigenvectors();
  return out;
}

}  // namespace kmetric
