#pragma once

#include <cmath>
#include <list>
#include <utility>
#include <vector>

#include "qnn/analysis.hpp"
#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"

namespace qnn {

struct DecompositionConfig {
  double tol = 1e-5;
};

/// diag(I_n, -1)
inline Matrix g_matrix(int n) {
  Matrix g = Matrix::Identity(n + 1, n + 1);
  g(n, n) = -1.0;
  return g;
}

namespace detail {
inline double gform(const Vector& u, const Vector& v) {
  const auto n = u.size() - 1;
  return u.head(n).dot(v.head(n)) - u(n) * v(n);
}
}  // namespace detail

/// Factors a PSD Z with Trace(Z G) = 0 into vectors v_j, sum v_j v_j' = Z,
/// each with v_j' G v_j = 0.
inline std::vector<Vector> neural_decompose(const Matrix& zstar, const DecompositionConfig& cfg = {}) {
  QNN_THROW_UNLESS(cfg.tol > 0.0, ErrorCode::InvalidArgument, "tolerance must be positive");
  linalg::require_symmetric(zstar, 1e-9, "decomposition input");
  QNN_THROW_UNLESS(zstar.rows() >= 2, ErrorCode::DimensionMismatch, "decomposition needs dimension >= 2");
  const int dim = static_cast<int>(zstar.rows());
  const Matrix z = 0.5 * (zstar + zstar.transpose());
  const auto es = linalg::eig(z);
  const Vector lam = es.eigenvalues();
  QNN_THROW_UNLESS(lam(0) >= -cfg.tol * std::max(1.0, lam(dim - 1)), ErrorCode::NotPSD,
                   "decomposition input is not PSD");
  const double tr = z.trace();
  const double trg = z.topLeftCorner(dim - 1, dim - 1).trace() - z(dim - 1, dim - 1);
  QNN_THROW_UNLESS(std::abs(trg) <= cfg.tol * std::max(tr, 1.0), ErrorCode::TraceConditionViolated,
                   "Trace(Z G) is not zero");

  std::list<Vector> pending;
  for (int i = dim - 1; i >= 0; --i)
    if (lam(i) > cfg.tol) pending.push_back(std::sqrt(lam(i)) * es.eigenvectors().col(i));

  std::vector<Vector> out;
  while (!pending.empty()) {
    Vector p1 = pending.front();
    pending.pop_front();
    const double g11 = detail::gform(p1, p1);
    if (std::abs(g11) <= cfg.tol * cfg.tol || pending.empty()) {
      out.push_back(std::move(p1));
      continue;
    }
    auto partner = pending.end();
    for (auto it = pending.begin(); it != pending.end(); ++it)
      if (g11 * detail::gform(*it, *it) < 0.0) {
        partner = it;
        break;
      }
    if (partner == pending.end()) {
      QNN_THROW_UNLESS(std::abs(g11) <= cfg.tol, ErrorCode::TraceConditionViolated,
                       "no partner vector with opposite G-sign");
      out.push_back(std::move(p1));
      continue;
    }
    const Vector pj = *partner;
    pending.erase(partner);
    const double g1j = detail::gform(p1, pj);
    const double gjj = detail::gform(pj, pj);
    const double delta = std::max(0.0, 4.0 * (g1j * g1j - g11 * gjj));
    const double gamma = (-2.0 * g1j + std::sqrt(delta)) / (2.0 * gjj);
    const double s = std::sqrt(1.0 + gamma * gamma);
    out.push_back((p1 + gamma * pj) / s);
    pending.push_front((pj - gamma * p1) / s);
  }
  return out;
}

/// Reads unit first-layer weights and signed second-layer weights from the
/// vectors of each side. Vectors are flipped so the last entry is >= 0.
inline NeuronList extract_weights(const std::vector<std::vector<Vector>>& vplus,
                                  const std::vector<std::vector<Vector>>& vminus,
                                  const DecompositionConfig& cfg = {}) {
  QNN_THROW_UNLESS(vplus.size() == vminus.size(), ErrorCode::DimensionMismatch,
                   "plus and minus lists must cover the same outputs");
  NeuronList out;
  out.n_inputs = -1;
  out.outputs.resize(vplus.size());
  auto take = [&](const Vector& v0, double sign, std::vector<Neuron>& dest) {
    if (v0.norm() <= cfg.tol) return;
    const auto n = v0.size() - 1;
    if (out.n_inputs < 0) out.n_inputs = static_cast<int>(n);
    QNN_THROW_UNLESS(n == out.n_inputs, ErrorCode::DimensionMismatch, "inconsistent vector lengths");
    Vector v = v0(n) < 0.0 ? Vector(-v0) : v0;
    const double cn = v.head(n).norm();
    const double d = v(n);
    QNN_THROW_UNLESS(cn > cfg.tol || std::abs(d) <= cfg.tol, ErrorCode::DegenerateVector,
                     "vector has vanishing weight part but nonzero scale");
    if (cn <= cfg.tol) return;
    dest.push_back(Neuron{v.head(n) / cn, sign * d * d});
  };
  for (size_t k = 0; k < vplus.size(); ++k) {
    for (const auto& v : vplus[k]) take(v, 1.0, out.outputs[k]);
    for (const auto& v : vminus[k]) take(v, -1.0, out.outputs[k]);
  }
  if (out.n_inputs < 0) out.n_inputs = 0;
  return out;
}

/// Collapses explicit neurons back into one quadratic form per output.
inline QuadraticNetwork reconstruct(const NeuronList& neurons, const ActivationParams& act) {
  const int n = neurons.n_inputs;
  std::vector<Matrix> z;
  for (const auto& outk : neurons.outputs) {
    Matrix m = Matrix::Zero(n + 1, n + 1);
    for (const auto& nr : outk) {
      QNN_THROW_UNLESS(nr.w.size() == n, ErrorCode::DimensionMismatch, "weight dimension mismatch");
      m.topLeftCorner(n, n) += nr.alpha * act.a * nr.w * nr.w.transpose();
      m.topRightCorner(n, 1) += nr.alpha * 0.5 * act.b * nr.w;
      m.bottomLeftCorner(1, n) += nr.alpha * 0.5 * act.b * nr.w.transpose();
      m(n, n) += nr.alpha * act.c * nr.w.squaredNorm();
    }
    z.push_back(std::move(m));
  }
  return QuadraticNetwork(n, act, std::move(z));
}

/// Recovers a (plus, minus) pair of PSD matrices, each with Trace(Z G) = 0,
/// whose difference encodes Zbar. The corner of Zbar is not used; it is
/// implied by the trace identity.
inline std::pair<Matrix, Matrix> split_zbar(const Matrix& zbar, const ActivationParams& act) {
  linalg::require_symmetric(zbar, 1e-9, "Zbar");
  act.validate();
  QNN_THROW_UNLESS(act.b != 0.0 || zbar.topRightCorner(zbar.rows() - 1, 1).norm() == 0.0,
                   ErrorCode::InvalidArgument, "b = 0 cannot encode a linear term");
  const int n = static_cast<int>(zbar.rows()) - 1;
  Matrix z(n + 1, n + 1);
  z.topLeftCorner(n, n) = zbar.topLeftCorner(n, n) / act.a;
  const Vector lin = act.b != 0.0 ? Vector(2.0 * zbar.topRightCorner(n, 1) / act.b) : Vector::Zero(n);
  z.topRightCorner(n, 1) = lin;
  z.bottomLeftCorner(1, n) = lin.transpose();
  z(n, n) = z.topLeftCorner(n, n).trace();
  auto [zp, zm] = symmetric_split(z);
  const double s = zp.topLeftCorner(n, n).trace() - zp(n, n);
  if (s > 0.0) {
    zp(n, n) += s;
    zm(n, n) += s;
  } else if (s < 0.0 && n > 0) {
    zp(0, 0) -= s;
    zm(0, 0) -= s;
  }
  return {zp, zm};
}

struct Decomposition {
  std::vector<std::vector<Vector>> vplus, vminus;
  NeuronList neurons;
};

inline Decomposition decompose_network(const QuadraticNetwork& net, const DecompositionConfig& cfg = {}) {
  Decomposition d;
  for (int k = 0; k < net.n_outputs(); ++k) {
    const auto [zp, zm] = split_zbar(net.zbar(k), net.activation());
    d.vplus.push_back(neural_decompose(zp, cfg));
    d.vminus.push_back(neural_decompose(zm, cfg));
  }
  d.neurons = extract_weights(d.vplus, d.vminus, cfg);
  d.neurons.n_inputs = net.n_inputs();
  return d;
}

}  // namespace qnn
