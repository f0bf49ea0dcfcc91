#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "qnn/error.hpp"

namespace qnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline bool is_symmetric(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  return max_abs(m - m.transpose()) <= rel_tol * scale;
}

inline void require_square(const Matrix& m, const char* what) {
  QNN_THROW_UNLESS(m.rows() == m.cols(), ErrorCode::DimensionMismatch,
                   std::string(what) + " must be square");
}

inline void require_symmetric(const Matrix& m, double rel_tol, const char* what) {
  require_square(m, what);
  QNN_THROW_UNLESS(is_symmetric(m, rel_tol), ErrorCode::NonSymmetric,
                   std::string(what) + " is not symmetric");
}

/// Symmetric eigendecomposition of the lower triangle of `m`. Eigenvalues
/// come back in ascending order.
inline Eigen::SelfAdjointEigenSolver<Matrix> eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  QNN_THROW_UNLESS(es.info() == Eigen::Success, ErrorCode::SolverFailed,
                   "symmetric eigendecomposition failed");
  return es;
}

inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return eig(0.5 * (m + m.transpose())).eigenvalues()(0);
}

inline double max_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const auto ev = eig(0.5 * (m + m.transpose())).eigenvalues();
  return ev(ev.size() - 1);
}

/// Spectral norm of a symmetric matrix, i.e. max |lambda_i|.
inline double spectral_radius_sym(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return eig(0.5 * (m + m.transpose())).eigenvalues().cwiseAbs().maxCoeff();
}

/// Index of (i, j), i <= j, in packed upper-triangular column-major storage.
constexpr int packed_index(int i, int j) {
  return i <= j ? j * (j + 1) / 2 + i : i * (i + 1) / 2 + j;
}

constexpr int packed_size(int dim) { return dim * (dim + 1) / 2; }

inline Vector pack_upper(const Matrix& m) {
  const int n = static_cast<int>(m.rows());
  Vector out(packed_size(n));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i <= j; ++i) out(packed_index(i, j)) = m(i, j);
  return out;
}

inline Matrix unpack_upper(const Vector& v, int dim) {
  QNN_THROW_UNLESS(v.size() == packed_size(dim), ErrorCode::DimensionMismatch,
                   "packed vector length does not match dimension");
  Matrix m(dim, dim);
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i <= j; ++i) m(i, j) = m(j, i) = v(packed_index(i, j));
  return m;
}

/// Vector with a trailing 1 appended.
inline Vector augment(const Vector& x) {
  Vector xb(x.size() + 1);
  xb.head(x.size()) = x;
  xb(x.size()) = 1.0;
  return xb;
}

}  // namespace linalg
}  // namespace qnn
