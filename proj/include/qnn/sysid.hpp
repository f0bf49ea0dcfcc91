#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"
#include "qnn/training.hpp"

namespace qnn {

/// Sampled input/output record; row t of u and y is time t.
struct IoLog {
  Matrix u;  // N x m
  Matrix y;  // N x p
  double sample_period = 1.0;

  int length() const { return static_cast<int>(y.rows()); }
  int m() const { return static_cast<int>(u.cols()); }
  int p() const { return static_cast<int>(y.cols()); }
};

/// Minimum record length for an overdetermined fit with n delays.
inline int overdetermined_length(int n, int p, int m) {
  const int d = p * n + m;
  return n + (d + 1) * (d + 2) / 2;
}

/// Regressor rows [u(t)', y(t-n+1)', ..., y(t)'] with target y(t+1)'.
inline std::pair<Matrix, Matrix> build_sysid_matrices(const IoLog& log, int n) {
  QNN_THROW_UNLESS(n >= 1, ErrorCode::InvalidArgument, "delay count must be >= 1");
  QNN_THROW_UNLESS(log.u.rows() == log.y.rows(), ErrorCode::DimensionMismatch,
                   "input and output logs differ in length");
  const int big_n = log.length();
  QNN_THROW_UNLESS(big_n > n, ErrorCode::TooFewSamples,
                   "need more than " + std::to_string(n) + " samples, got " + std::to_string(big_n));
  const int m = log.m(), p = log.p();
  const int rows = big_n - n;
  Matrix x(rows, m + p * n), y(rows, p);
  for (int r = 0; r < rows; ++r) {
    const int t = r + n - 1;
    x.block(r, 0, 1, m) = log.u.row(t);
    for (int d = 0; d < n; ++d) x.block(r, m + d * p, 1, p) = log.y.row(t - n + 1 + d);
    y.row(r) = log.y.row(t + 1);
  }
  return {x, y};
}

/// Quadratic state-space model. The state stacks the last n outputs, oldest
/// first; each output's next value is a quadratic form in [u; x; 1].
class StateSpaceModel {
 public:
  StateSpaceModel() = default;

  StateSpaceModel(int n, int p, int m, std::vector<Matrix> zbar, ActivationParams act = {})
      : n_(n), p_(p), m_(m), zbar_(std::move(zbar)), act_(act) {
    QNN_THROW_UNLESS(n_ >= 1 && p_ >= 1 && m_ >= 0, ErrorCode::InvalidArgument, "invalid model dimensions");
    QNN_THROW_UNLESS(static_cast<int>(zbar_.size()) == p_, ErrorCode::DimensionMismatch,
                     "need one Zbar per output");
    for (auto& z : zbar_) {
      QNN_THROW_UNLESS(z.rows() == dim() + 1 && z.cols() == dim() + 1, ErrorCode::DimensionMismatch,
                       "Zbar must have size m + pn + 1");
      z = z.selfadjointView<Eigen::Upper>();
    }
  }

  static StateSpaceModel from_network(const QuadraticNetwork& net, int n, int p, int m) {
    QNN_THROW_UNLESS(net.n_inputs() == m + p * n && net.n_outputs() == p, ErrorCode::DimensionMismatch,
                     "network shape does not match m + pn inputs and p outputs");
    return StateSpaceModel(n, p, m, net.zbars(), net.activation());
  }

  QuadraticNetwork as_network() const { return QuadraticNetwork(dim(), act_, zbar_); }

  int delays() const { return n_; }
  int p() const { return p_; }
  int m() const { return m_; }
  int nx() const { return p_ * n_; }
  int dim() const { return m_ + p_ * n_; }
  const ActivationParams& activation() const { return act_; }
  const Matrix& zbar(int i) const { return zbar_.at(static_cast<size_t>(i)); }
  const std::vector<Matrix>& zbars() const { return zbar_; }

  // Named blocks of output i.
  Matrix z_uu(int i) const { return zbar(i).topLeftCorner(m_, m_); }
  Matrix z_ux(int i) const { return zbar(i).block(0, m_, m_, nx()); }
  Vector z_u(int i) const { return zbar(i).block(0, dim(), m_, 1); }
  Matrix z_xx(int i) const { return zbar(i).block(m_, m_, nx(), nx()); }
  Vector z_x(int i) const { return zbar(i).block(m_, dim(), nx(), 1); }
  double z_nn(int i) const { return zbar(i)(dim(), dim()); }
  /// [[Zxx, Zx], [Zx', Znn]]
  Matrix z_xbar_xbar(int i) const { return zbar(i).bottomRightCorner(nx() + 1, nx() + 1); }
  /// [Zux, Zu]
  Matrix z_u_xbar(int i) const { return zbar(i).block(0, m_, m_, nx() + 1); }

  Matrix shift_matrix() const {
    Matrix a = Matrix::Zero(nx(), nx());
    if (n_ > 1) a.topRightCorner(p_ * (n_ - 1), p_ * (n_ - 1)).setIdentity();
    return a;
  }

  Matrix cal_a() const {
    Matrix a = Matrix::Zero(nx() + 1, nx() + 1);
    a.topLeftCorner(nx(), nx()) = shift_matrix();
    a(nx(), nx()) = 1.0;
    return a;
  }

  Matrix f(const Vector& x) const {
    check_state(x);
    const Vector xb = linalg::augment(x);
    Matrix out = Matrix::Zero(nx() + 1, nx() + 1);
    for (int i = 0; i < p_; ++i) out.row(p_ * (n_ - 1) + i) = xb.transpose() * z_xbar_xbar(i);
    return out;
  }

  Matrix a_bar(const Vector& x) const { return cal_a() + f(x); }

  Matrix b_bar(const Vector& x) const {
    check_state(x);
    const Vector xb = linalg::augment(x);
    Matrix out = Matrix::Zero(nx() + 1, m_);
    for (int i = 0; i < p_; ++i) out.row(p_ * (n_ - 1) + i) = 2.0 * xb.transpose() * z_u_xbar(i).transpose();
    return out;
  }

  Matrix e(const Vector& u) const {
    QNN_THROW_UNLESS(u.size() == m_, ErrorCode::DimensionMismatch, "input has wrong dimension");
    Matrix out = Matrix::Zero(nx() + 1, m_);
    for (int i = 0; i < p_; ++i) out.row(p_ * (n_ - 1) + i) = u.transpose() * z_uu(i);
    return out;
  }

  /// Next output from the stacked regressor [u; x; 1].
  Vector predict(const Vector& x, const Vector& u) const {
    check_state(x);
    QNN_THROW_UNLESS(u.size() == m_, ErrorCode::DimensionMismatch, "input has wrong dimension");
    Vector yu(dim() + 1);
    yu << u, x, 1.0;
    Vector y(p_);
    for (int i = 0; i < p_; ++i) y(i) = yu.dot(zbar(i) * yu);
    return y;
  }

  /// One step of xbar+ = Abar(x) xbar + Bbar(x) u + E(u) u; returns x+.
  Vector step(const Vector& x, const Vector& u) const {
    const Vector xb = linalg::augment(x);
    const Vector next = a_bar(x) * xb + b_bar(x) * u + e(u) * u;
    return next.head(nx());
  }

  /// Direct shift-and-append form of step.
  Vector step_direct(const Vector& x, const Vector& u) const {
    Vector next(nx());
    if (n_ > 1) next.head(p_ * (n_ - 1)) = x.tail(p_ * (n_ - 1));
    next.tail(p_) = predict(x, u);
    return next;
  }

  Vector output(const Vector& x) const { return x.tail(p_); }

 private:
  void check_state(const Vector& x) const {
    QNN_THROW_UNLESS(x.size() == nx(), ErrorCode::DimensionMismatch,
                     "state has " + std::to_string(x.size()) + " entries, expected " + std::to_string(nx()));
  }

  int n_ = 1, p_ = 1, m_ = 0;
  std::vector<Matrix> zbar_;
  ActivationParams act_;
};

struct Trajectory {
  std::vector<Vector> states;   // x(0) .. x(T)
  std::vector<Vector> outputs;  // y part of each state
};

inline constexpr double kDivergenceGuard = 1e12;

inline Trajectory simulate(const StateSpaceModel& model, const Vector& x0, const std::vector<Vector>& inputs) {
  QNN_THROW_UNLESS(x0.size() == model.nx(), ErrorCode::DimensionMismatch, "initial state has wrong dimension");
  Trajectory tr;
  tr.states.push_back(x0);
  tr.outputs.push_back(model.output(x0));
  Vector x = x0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    x = model.step_direct(x, inputs[t]);
    QNN_THROW_UNLESS(x.allFinite() && x.cwiseAbs().maxCoeff() <= kDivergenceGuard, ErrorCode::NonFinite,
                     "trajectory diverged at step " + std::to_string(t + 1));
    tr.states.push_back(x);
    tr.outputs.push_back(model.output(x));
  }
  return tr;
}

/// One-step-ahead predictions for every regressor row of a log.
inline Matrix one_step_predictions(const StateSpaceModel& model, const IoLog& log) {
  const auto [x, y] = build_sysid_matrices(log, model.delays());
  return model.as_network().evaluate_rows(x);
}

/// Sample autocorrelation r(k) = c(k)/c(0), where c(k) is the mean of the
/// N-k lagged products of the centered signal.
inline std::vector<double> autocorrelation(const Vector& y, int max_lag) {
  const auto n = y.size();
  QNN_THROW_UNLESS(max_lag >= 0 && n > max_lag, ErrorCode::TooFewSamples,
                   "sequence shorter than the requested lag");
  const double mean = y.mean();
  const Vector c = y.array() - mean;
  const double c0 = c.squaredNorm() / static_cast<double>(n);
  QNN_THROW_UNLESS(c0 > 1e-24 * std::max(1.0, mean * mean), ErrorCode::ConstantSignal, "signal has zero variance");
  std::vector<double> r;
  for (int k = 0; k <= max_lag; ++k) {
    const double ck = c.head(n - k).dot(c.tail(n - k)) / static_cast<double>(n - k);
    r.push_back(ck / c0);
  }
  r[0] = 1.0;
  return r;
}

struct IdentifyResult {
  StateSpaceModel model;
  TrainResult training;
  bool overdetermined = true;
};

inline IdentifyResult identify(const IoLog& log, int n, TrainingConfig cfg) {
  const auto [x, y] = build_sysid_matrices(log, n);
  cfg.offset_augment = false;
  IdentifyResult res;
  res.overdetermined = log.length() >= overdetermined_length(n, log.p(), log.m());
  res.training = train(x, y, cfg);
  res.model = StateSpaceModel::from_network(res.training.network, n, log.p(), log.m());
  return res;
}

}  // namespace qnn
