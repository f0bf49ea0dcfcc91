#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"

namespace qnn {

/// Corner entry equals (c/a) times the trace of the top-left block.
inline bool is_representable(const Matrix& z, const ActivationParams& act, double tol = 1e-6) {
  if (z.rows() != z.cols() || z.rows() < 2) return false;
  const int n = static_cast<int>(z.rows()) - 1;
  const double corner = z(n, n);
  const double target = act.c_over_a() * z.topLeftCorner(n, n).trace();
  return std::abs(corner - target) <= tol * (1.0 + std::abs(corner));
}

inline double representability_residual(const Matrix& z, const ActivationParams& act) {
  const int n = static_cast<int>(z.rows()) - 1;
  return z(n, n) - act.c_over_a() * z.topLeftCorner(n, n).trace();
}

/// Single-input feasibility of a (plus, minus) pair: Z1 >= 0, |Z2| <= Z1, Z4 = Z1.
inline bool siso_constraints_check(const Matrix& zp, const Matrix& zm, double tol = 1e-9) {
  QNN_THROW_UNLESS(zp.rows() == 2 && zp.cols() == 2 && zm.rows() == 2 && zm.cols() == 2,
                   ErrorCode::DimensionMismatch, "single-input check expects 2x2 matrices");
  auto ok = [tol](const Matrix& z) {
    return z(0, 0) >= -tol && std::abs(z(0, 1)) <= z(0, 0) + tol && std::abs(z(1, 1) - z(0, 0)) <= tol;
  };
  return ok(zp) && ok(zm);
}

/// Z = Zp - Zm with both parts PSD, from the signed eigenvalues of Z.
inline std::pair<Matrix, Matrix> symmetric_split(const Matrix& z) {
  linalg::require_symmetric(z, 1e-12, "symmetric_split input");
  if (z.size() == 0) return {z, z};
  const auto es = linalg::eig(z);
  const Vector pos = es.eigenvalues().cwiseMax(0.0);
  Matrix zp = es.eigenvectors() * pos.asDiagonal() * es.eigenvectors().transpose();
  zp = 0.5 * (zp + zp.transpose()).eval();
  Matrix zm = zp - z;
  zm = 0.5 * (zm + zm.transpose()).eval();
  return {zp, zm};
}

struct LipschitzReport {
  std::vector<double> bound;     // L_n per output
  std::vector<double> gap;       // |f(x1) - f(x2)| per output
  std::vector<double> allowed;   // L_n * ||xbar1 - xbar2||_2
  bool holds = true;
};

/// Max |lambda| of each Zbar; the spectral norm of a symmetric matrix.
inline std::vector<double> spectral_norms(const QuadraticNetwork& net) {
  std::vector<double> out;
  for (const auto& z : net.zbars()) out.push_back(linalg::spectral_radius_sym(z));
  return out;
}

inline LipschitzReport lipschitz_bound(const QuadraticNetwork& net, const Vector& x1, const Vector& x2) {
  QNN_THROW_UNLESS(x1.size() == net.n_inputs() && x2.size() == net.n_inputs(),
                   ErrorCode::DimensionMismatch, "Lipschitz inputs have wrong dimension");
  const Vector xb1 = linalg::augment(x1), xb2 = linalg::augment(x2);
  const double root = std::sqrt(static_cast<double>(net.n_inputs() + 1));
  const double span = xb1.lpNorm<Eigen::Infinity>() + xb2.lpNorm<Eigen::Infinity>();
  const double dist = (xb1 - xb2).norm();
  const Vector y1 = net.evaluate(x1), y2 = net.evaluate(x2);
  const auto norms = spectral_norms(net);
  LipschitzReport rep;
  for (int k = 0; k < net.n_outputs(); ++k) {
    const double l = root * norms[static_cast<size_t>(k)] * span;
    const double gap = std::abs(y1(k) - y2(k));
    const double allowed = l * dist;
    rep.bound.push_back(l);
    rep.gap.push_back(gap);
    rep.allowed.push_back(allowed);
    if (gap > allowed * (1.0 + 1e-12) + 1e-14) rep.holds = false;
  }
  return rep;
}

/// Per-output constant valid for all inputs with ||x||_inf <= x_bound.
inline std::vector<double> lipschitz_constants(const QuadraticNetwork& net, double x_bound) {
  QNN_THROW_UNLESS(x_bound >= 0.0, ErrorCode::InvalidArgument, "input bound must be nonnegative");
  const double root = std::sqrt(static_cast<double>(net.n_inputs() + 1));
  const double span = 2.0 * std::max(1.0, x_bound);
  std::vector<double> out;
  for (double s : spectral_norms(net)) out.push_back(root * s * span);
  return out;
}

/// E[x' P x] for x with mean mu and covariance Sigma.
inline double expected_output(const Matrix& p, const Vector& mu, const Matrix& sigma) {
  linalg::require_square(p, "P");
  QNN_THROW_UNLESS(mu.size() == p.rows() && sigma.rows() == p.rows() && sigma.cols() == p.cols(),
                   ErrorCode::DimensionMismatch, "expected_output dimension mismatch");
  linalg::require_symmetric(sigma, 1e-10, "Sigma");
  QNN_THROW_UNLESS(linalg::min_eigenvalue(sigma) >= -1e-10 * std::max(1.0, linalg::max_abs(sigma)),
                   ErrorCode::NotPSD, "covariance is not positive semidefinite");
  return mu.dot(p * mu) + (p * sigma).trace();
}

}  // namespace qnn
