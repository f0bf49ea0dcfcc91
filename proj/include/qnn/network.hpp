#pragma once

#include <cmath>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"

namespace qnn {

/// sigma(z) = a z^2 + b z + c
struct ActivationParams {
  double a = 0.0937;
  double b = 0.5;
  double c = 0.4688;

  ActivationParams() = default;
  ActivationParams(double a_, double b_, double c_) : a(a_), b(b_), c(c_) { validate(); }

  void validate() const {
    QNN_THROW_UNLESS(a != 0.0 && std::isfinite(a) && std::isfinite(b) && std::isfinite(c),
                     ErrorCode::InvalidArgument, "activation requires finite a != 0");
  }
  double operator()(double z) const { return (a * z + b) * z + c; }
  double c_over_a() const { return c / a; }

  friend bool operator==(const ActivationParams&, const ActivationParams&) = default;
};

/// Single hidden layer network with quadratic activation, stored as one
/// symmetric (n+1)x(n+1) matrix per output: y_k = xbar' Zbar_k xbar.
class QuadraticNetwork {
 public:
  QuadraticNetwork() = default;

  QuadraticNetwork(int n_inputs, ActivationParams act, std::vector<Matrix> zbar)
      : n_(n_inputs), act_(act), zbar_(std::move(zbar)) {
    QNN_THROW_UNLESS(n_ >= 0, ErrorCode::InvalidArgument, "negative input count");
    act_.validate();
    for (auto& z : zbar_) {
      QNN_THROW_UNLESS(z.rows() == n_ + 1 && z.cols() == n_ + 1, ErrorCode::DimensionMismatch,
                       "Zbar must be (n+1)x(n+1)");
      // Upper triangle is authoritative.
      z = z.selfadjointView<Eigen::Upper>();
    }
  }

  static QuadraticNetwork zeros(int n_inputs, int n_outputs, ActivationParams act = {}) {
    return QuadraticNetwork(n_inputs, act,
                            std::vector<Matrix>(static_cast<size_t>(n_outputs),
                                                Matrix::Zero(n_inputs + 1, n_inputs + 1)));
  }

  int n_inputs() const { return n_; }
  int n_outputs() const { return static_cast<int>(zbar_.size()); }
  const ActivationParams& activation() const { return act_; }
  const Matrix& zbar(int k) const { return zbar_.at(static_cast<size_t>(k)); }
  const std::vector<Matrix>& zbars() const { return zbar_; }

  /// Offset-augmented input flag; informational, set by training.
  bool offset_augmented() const { return offset_; }
  void set_offset_augmented(bool v) { offset_ = v; }

  Vector evaluate(const Vector& x) const {
    QNN_THROW_UNLESS(x.size() == n_, ErrorCode::DimensionMismatch,
                     "input has " + std::to_string(x.size()) + " entries, expected " + std::to_string(n_));
    const Vector xb = linalg::augment(x);
    Vector y(n_outputs());
    for (int k = 0; k < n_outputs(); ++k) y(k) = xb.dot(zbar_[static_cast<size_t>(k)] * xb);
    return y;
  }

  /// Row-wise evaluation of an N x n sample matrix.
  Matrix evaluate_rows(const Matrix& x) const {
    QNN_THROW_UNLESS(x.cols() == n_, ErrorCode::DimensionMismatch, "sample width mismatch");
    Matrix xb(x.rows(), n_ + 1);
    xb.leftCols(n_) = x;
    xb.col(n_).setOnes();
    Matrix y(x.rows(), n_outputs());
    for (int k = 0; k < n_outputs(); ++k)
      y.col(k) = (xb * zbar_[static_cast<size_t>(k)]).cwiseProduct(xb).rowwise().sum();
    return y;
  }

  QuadraticNetwork scaled(double s) const {
    std::vector<Matrix> z = zbar_;
    for (auto& m : z) m *= s;
    QuadraticNetwork out(n_, act_, std::move(z));
    out.offset_ = offset_;
    return out;
  }

 private:
  int n_ = 0;
  ActivationParams act_;
  std::vector<Matrix> zbar_;
  bool offset_ = false;
};

struct Neuron {
  Vector w;
  double alpha = 0.0;
};

/// Explicit weights: output k is sum_j alpha_kj * sigma(x' w_kj).
struct NeuronList {
  int n_inputs = 0;
  std::vector<std::vector<Neuron>> outputs;

  int count(int k) const { return static_cast<int>(outputs.at(static_cast<size_t>(k)).size()); }
  int total() const {
    int m = 0;
    for (const auto& o : outputs) m += static_cast<int>(o.size());
    return m;
  }
};

inline Vector evaluate_neurons(const NeuronList& neurons, const ActivationParams& act, const Vector& x) {
  QNN_THROW_UNLESS(x.size() == neurons.n_inputs, ErrorCode::DimensionMismatch,
                   "input dimension does not match neuron weights");
  Vector y = Vector::Zero(static_cast<Eigen::Index>(neurons.outputs.size()));
  for (size_t k = 0; k < neurons.outputs.size(); ++k)
    for (const auto& nr : neurons.outputs[k]) {
      QNN_THROW_UNLESS(nr.w.size() == x.size(), ErrorCode::DimensionMismatch, "weight dimension mismatch");
      y(static_cast<Eigen::Index>(k)) += nr.alpha * act(x.dot(nr.w));
    }
  return y;
}

}  // namespace qnn
