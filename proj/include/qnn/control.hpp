#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qnn/analysis.hpp"
#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"
#include "qnn/polynomial.hpp"
#include "qnn/sdp/solver.hpp"
#include "qnn/sos.hpp"
#include "qnn/sysid.hpp"

namespace qnn {

// ---------------------------------------------------------------------------
// Set points

/// Gamma = [I_p; ...; I_p] (n copies), so x* = Gamma y*.
inline Matrix gamma_matrix(int n, int p) {
  Matrix g(n * p, p);
  for (int k = 0; k < n; ++k) g.block(k * p, 0, p, p).setIdentity();
  return g;
}

inline Vector state_setpoint(const Vector& y_star, int n) { return gamma_matrix(n, static_cast<int>(y_star.size())) * y_star; }

struct SteadyStateResult {
  Vector x_star;
  std::vector<Vector> inputs;  // every u* found, sorted
  bool arbitrary = false;      // any u works; inputs holds the zero vector
  double residual = 0.0;       // worst residual over the returned inputs
};

namespace detail {

inline Vector steady_residual(const StateSpaceModel& model, const Vector& x_star, const Vector& y_star,
                              const Vector& u) {
  return model.predict(x_star, u) - y_star;
}

inline void sort_unique(std::vector<Vector>& v, double tol) {
  std::sort(v.begin(), v.end(), [](const Vector& a, const Vector& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  std::vector<Vector> out;
  for (const auto& x : v) {
    bool dup = false;
    for (const auto& y : out)
      if ((x - y).cwiseAbs().maxCoeff() <= tol * std::max(1.0, y.cwiseAbs().maxCoeff())) dup = true;
    if (!dup) out.push_back(x);
  }
  v = std::move(out);
}

inline std::vector<double> real_roots(double a, double b, double c, double scale) {
  const double tiny = 1e-12 * scale;
  if (std::abs(a) <= tiny) {
    if (std::abs(b) <= tiny) return {};
    return {-c / b};
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc < -1e-12 * scale * scale) return {};
  if (disc <= 1e-12 * scale * scale) return {-b / (2.0 * a)};
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (b + std::copysign(sq, b));
  return {q / a, c / q};
}

}  // namespace detail

/// Inputs u* with x* = A(x*) x* + B(x*) u* + E(u*) u* for x* = Gamma y*.
inline SteadyStateResult solve_steady_state(const StateSpaceModel& model, const Vector& y_star,
                                            double tol = 1e-9) {
  QNN_THROW_UNLESS(y_star.size() == model.p(), ErrorCode::DimensionMismatch, "set point has wrong dimension");
  SteadyStateResult res;
  res.x_star = state_setpoint(y_star, model.delays());
  const Vector xb = linalg::augment(res.x_star);
  const int m = model.m(), p = model.p();

  // Output i: u' Zuu u + 2 (Zu,xbar xbar*)' u + (xbar*' Zxbar,xbar xbar* - y*_i).
  std::vector<Matrix> quad(static_cast<size_t>(p));
  std::vector<Vector> lin(static_cast<size_t>(p));
  std::vector<double> cst(static_cast<size_t>(p));
  std::vector<double> scale(static_cast<size_t>(p));
  bool all_trivial = true;
  for (int i = 0; i < p; ++i) {
    quad[static_cast<size_t>(i)] = model.z_uu(i);
    lin[static_cast<size_t>(i)] = 2.0 * model.z_u_xbar(i) * xb;
    cst[static_cast<size_t>(i)] = xb.dot(model.z_xbar_xbar(i) * xb) - y_star(i);
    const double sc = std::max({1.0, std::abs(y_star(i)), m ? quad[static_cast<size_t>(i)].cwiseAbs().maxCoeff() : 0.0,
                                m ? lin[static_cast<size_t>(i)].cwiseAbs().maxCoeff() : 0.0});
    scale[static_cast<size_t>(i)] = sc;
    const double mag = std::max({m ? quad[static_cast<size_t>(i)].cwiseAbs().maxCoeff() : 0.0,
                                 m ? lin[static_cast<size_t>(i)].cwiseAbs().maxCoeff() : 0.0,
                                 std::abs(cst[static_cast<size_t>(i)])});
    if (mag > 1e-12 * sc) all_trivial = false;
  }
  auto residual = [&](const Vector& u) {
    double r = 0.0;
    for (int i = 0; i < p; ++i) {
      const auto k = static_cast<size_t>(i);
      r = std::max(r, std::abs(u.dot(quad[k] * u) + lin[k].dot(u) + cst[k]) / scale[k]);
    }
    return r;
  };

  if (all_trivial) {
    res.arbitrary = true;
    res.inputs.push_back(Vector::Zero(m));
    return res;
  }
  QNN_THROW_UNLESS(m > 0, ErrorCode::NoSolution, "model has no inputs and the set point is not an equilibrium");

  std::vector<Vector> cands;
  if (m == 1) {
    for (int i = 0; i < p; ++i) {
      const auto k = static_cast<size_t>(i);
      for (double r : detail::real_roots(quad[k](0, 0), lin[k](0), cst[k], scale[k])) cands.push_back(Vector::Constant(1, r));
    }
  } else {
    // Levenberg-Marquardt from 32 deterministic starts.
    std::mt19937 rng(1);
    std::normal_distribution<double> nd;
    const double s0 = std::max(1.0, y_star.cwiseAbs().maxCoeff());
    for (int start = 0; start < 32; ++start) {
      Vector u = Vector::Zero(m);
      if (start > 0)
        for (int j = 0; j < m; ++j) u(j) = s0 * nd(rng);
      double lambda = 1e-3;
      for (int it = 0; it < 300; ++it) {
        Vector r(p);
        Matrix jac(p, m);
        for (int i = 0; i < p; ++i) {
          const auto k = static_cast<size_t>(i);
          r(i) = (u.dot(quad[k] * u) + lin[k].dot(u) + cst[k]) / scale[k];
          jac.row(i) = ((2.0 * quad[k] * u + lin[k]) / scale[k]).transpose();
        }
        if (r.cwiseAbs().maxCoeff() <= 1e-14) break;
        const Matrix h = jac.transpose() * jac;
        const Vector g = jac.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 20 && !improved; ++tries) {
          const Matrix lhs = h + lambda * Matrix::Identity(m, m);
          const Vector du = lhs.ldlt().solve(-g);
          const Vector un = u + du;
          double rn = 0.0;
          for (int i = 0; i < p; ++i) {
            const auto k = static_cast<size_t>(i);
            const double v = (un.dot(quad[k] * un) + lin[k].dot(un) + cst[k]) / scale[k];
            rn += v * v;
          }
          if (rn < r.squaredNorm()) {
            u = un;
            lambda = std::max(lambda / 3.0, 1e-12);
            improved = true;
          } else {
            lambda *= 4.0;
          }
        }
        if (!improved) break;
      }
      cands.push_back(u);
    }
  }
  for (const auto& u : cands)
    if (residual(u) <= tol) res.inputs.push_back(u);
  detail::sort_unique(res.inputs, 1e-6);
  QNN_THROW_UNLESS(!res.inputs.empty(), ErrorCode::NoSolution, "no input holds the set point");
  for (const auto& u : res.inputs) res.residual = std::max(res.residual, residual(u));
  return res;
}

// ---------------------------------------------------------------------------
// Plants

/// x+ = A(x) x + B(x) u with polynomial matrices.
struct PolynomialSystem {
  int nx = 0, m = 0;
  PolyMatrix a, b;
  std::vector<std::string> state_names;

  PolynomialSystem() = default;
  PolynomialSystem(PolyMatrix a_, PolyMatrix b_) : nx(a_.rows()), m(b_.cols()), a(std::move(a_)), b(std::move(b_)) {
    QNN_THROW_UNLESS(a.cols() == nx && b.rows() == nx && a.nvars() == nx && b.nvars() == nx,
                     ErrorCode::DimensionMismatch, "A must be nx x nx and B nx x m, both in nx variables");
  }

  Vector step(const Vector& x, const Vector& u) const { return a.evaluate(x) * x + b.evaluate(x) * u; }

  /// Forward-difference quadrotor: position X and velocity Vx with quadratic drag.
  static PolynomialSystem quadrotor(double t = 0.102, double td = 0.0023, double tg = 1.0) {
    PolyMatrix a(2, 2, 2), b(2, 1, 2);
    a(0, 0) = Polynomial::constant(2, 1.0);
    a(0, 1) = Polynomial::constant(2, t);
    a(1, 1) = Polynomial::constant(2, 1.0) - td * Polynomial::variable(2, 1);
    b(1, 0) = Polynomial::constant(2, tg);
    PolynomialSystem sys(a, b);
    sys.state_names = {"X", "Vx"};
    return sys;
  }
};

/// Closed-loop ingredients in the augmented coordinates xbar = [x; 1]:
/// xbar+ = Abar(x) xbar + Bbar(x) u + E(u) u with E(u) = sum_j u_j E_j.
struct QuadraticPlant {
  int nx = 0, m = 0;
  PolyMatrix a_bar, b_bar;
  std::vector<Matrix> e_terms;

  Matrix e(const Vector& u) const {
    Matrix out = Matrix::Zero(nx + 1, m);
    for (size_t j = 0; j < e_terms.size(); ++j) out += u(static_cast<Eigen::Index>(j)) * e_terms[j];
    return out;
  }

  static QuadraticPlant from_system(const PolynomialSystem& sys) {
    QuadraticPlant pl;
    pl.nx = sys.nx;
    pl.m = sys.m;
    pl.a_bar = PolyMatrix(sys.nx + 1, sys.nx + 1, sys.nx);
    pl.a_bar.set_block(0, 0, sys.a);
    pl.a_bar(sys.nx, sys.nx) = Polynomial::constant(sys.nx, 1.0);
    pl.b_bar = PolyMatrix(sys.nx + 1, sys.m, sys.nx);
    pl.b_bar.set_block(0, 0, sys.b);
    return pl;
  }

  static QuadraticPlant from_model(const StateSpaceModel& model) {
    QuadraticPlant pl;
    const int nx = model.nx(), m = model.m(), p = model.p();
    pl.nx = nx;
    pl.m = m;
    pl.a_bar = PolyMatrix::constant(model.cal_a(), nx);
    pl.b_bar = PolyMatrix(nx + 1, m, nx);
    // xbar' M as a row of affine polynomials.
    auto xbar_row = [&](const Matrix& mat, int col) {
      Polynomial poly = Polynomial::constant(nx, mat(nx, col));
      for (int k = 0; k < nx; ++k) poly += mat(k, col) * Polynomial::variable(nx, k);
      return poly;
    };
    for (int i = 0; i < p; ++i) {
      const int row = p * (model.delays() - 1) + i;
      const Matrix zxx = model.z_xbar_xbar(i);
      for (int c = 0; c <= nx; ++c) pl.a_bar(row, c) += xbar_row(zxx, c);
      const Matrix zux_t = model.z_u_xbar(i).transpose();
      for (int c = 0; c < m; ++c) pl.b_bar(row, c) = 2.0 * xbar_row(zux_t, c);
    }
    for (int j = 0; j < m; ++j) {
      Matrix ej = Matrix::Zero(nx + 1, m);
      for (int i = 0; i < p; ++i) ej.row(p * (model.delays() - 1) + i) = model.z_uu(i).row(j);
      pl.e_terms.push_back(ej);
    }
    return pl;
  }
};

/// Drops E under the no-input-coupling assumption (Zuu = 0) and a zero
/// offset (Znn = 0), giving x+ = A(x) x + B(x) u.
inline PolynomialSystem to_polynomial_system(const StateSpaceModel& model, double tol = 1e-9) {
  for (int i = 0; i < model.p(); ++i) {
    if (model.m() > 0)
      QNN_THROW_UNLESS(model.z_uu(i).cwiseAbs().maxCoeff() <= tol, ErrorCode::AssumptionViolated,
                       "Zuu of output " + std::to_string(i) + " is nonzero (norm " +
                           std::to_string(model.z_uu(i).norm()) + ")");
    QNN_THROW_UNLESS(std::abs(model.z_nn(i)) <= tol, ErrorCode::AssumptionViolated,
                     "Znn of output " + std::to_string(i) + " is nonzero; the origin is not an equilibrium");
  }
  const QuadraticPlant pl = QuadraticPlant::from_model(model);
  return PolynomialSystem(pl.a_bar.block(0, 0, pl.nx, pl.nx), pl.b_bar.block(0, 0, pl.nx, pl.m));
}

// ---------------------------------------------------------------------------
// Controllers

/// u(x) = K(x) (x - x*) + u*. K is a polynomial matrix, or a pointwise
/// evaluator when it is rational in x.
struct Controller {
  PolyMatrix gain;
  std::function<Matrix(const Vector&)> rational_gain;
  Vector x_star, u_star;

  static Controller polynomial(PolyMatrix k, Vector x_star = {}, Vector u_star = {}) {
    Controller c;
    if (x_star.size() == 0) x_star = Vector::Zero(k.cols());
    if (u_star.size() == 0) u_star = Vector::Zero(k.rows());
    QNN_THROW_UNLESS(x_star.size() == k.cols() && u_star.size() == k.rows(), ErrorCode::DimensionMismatch,
                     "set point does not match the gain shape");
    c.gain = std::move(k);
    c.x_star = std::move(x_star);
    c.u_star = std::move(u_star);
    return c;
  }
  static Controller constant(const Matrix& k, Vector x_star = {}, Vector u_star = {}) {
    return polynomial(PolyMatrix::constant(k, static_cast<int>(k.cols())), std::move(x_star), std::move(u_star));
  }

  bool is_polynomial() const { return !rational_gain; }
  int nx() const { return static_cast<int>(x_star.size()); }
  int m() const { return static_cast<int>(u_star.size()); }

  Matrix gain_at(const Vector& x) const { return rational_gain ? rational_gain(x) : gain.evaluate(x); }

  /// Kbar(x) = [K(x), u* - K(x) x*].
  Matrix k_bar(const Vector& x) const {
    const Matrix k = gain_at(x);
    Matrix kb(k.rows(), k.cols() + 1);
    kb << k, u_star - k * x_star;
    return kb;
  }

  Vector input(const Vector& x) const { return gain_at(x) * (x - x_star) + u_star; }

  PolyMatrix k_bar_poly() const {
    QNN_THROW_UNLESS(is_polynomial(), ErrorCode::DegreeTooHigh, "controller gain is rational, not polynomial");
    const int nv = gain.nvars();
    PolyMatrix kb(m(), nx() + 1, nv);
    kb.set_block(0, 0, gain);
    const PolyMatrix off = PolyMatrix::constant(u_star, nv) - gain * PolyMatrix::constant(x_star, nv);
    kb.set_block(0, nx(), off);
    return kb;
  }

  /// Input j as a polynomial in x.
  Polynomial input_poly(int j) const {
    QNN_THROW_UNLESS(is_polynomial(), ErrorCode::DegreeTooHigh, "controller gain is rational, not polynomial");
    const int nv = gain.nvars();
    PolyMatrix xs(nx() + 1, 1, nv);
    for (int k = 0; k < nx(); ++k) xs(k, 0) = Polynomial::variable(nv, k);
    xs(nx(), 0) = Polynomial::constant(nv, 1.0);
    return (k_bar_poly() * xs)(j, 0);
  }
};

/// Quadratic form U with u_j(x) = [x; 1]' U [x; 1].
inline Matrix controller_as_quadratic_form(const Controller& ctl, int j = 0) {
  const Polynomial u = ctl.input_poly(j).pruned(0.0);
  QNN_THROW_UNLESS(u.degree() <= 2, ErrorCode::DegreeTooHigh,
                   "controller has degree " + std::to_string(u.degree()) + "; a quadratic form needs <= 2");
  const int n = ctl.nx();
  Matrix q = Matrix::Zero(n + 1, n + 1);
  for (const auto& [mono, c] : u.terms()) {
    std::vector<int> idx;
    for (int k = 0; k < n; ++k)
      for (int e = 0; e < mono[static_cast<size_t>(k)]; ++e) idx.push_back(k);
    if (idx.empty()) {
      q(n, n) += c;
    } else if (idx.size() == 1) {
      q(idx[0], n) += c / 2.0;
      q(n, idx[0]) += c / 2.0;
    } else if (idx[0] == idx[1]) {
      q(idx[0], idx[0]) += c;
    } else {
      q(idx[0], idx[1]) += c / 2.0;
      q(idx[1], idx[0]) += c / 2.0;
    }
  }
  return q;
}

// ---------------------------------------------------------------------------
// Closed loop and Lyapunov verification

class ClosedLoop {
 public:
  ClosedLoop(QuadraticPlant plant, Controller ctl) : plant_(std::move(plant)), ctl_(std::move(ctl)) {
    QNN_THROW_UNLESS(ctl_.nx() == plant_.nx && ctl_.m() == plant_.m, ErrorCode::DimensionMismatch,
                     "controller shape does not match the plant");
  }
  ClosedLoop(const StateSpaceModel& model, Controller ctl) : ClosedLoop(QuadraticPlant::from_model(model), std::move(ctl)) {}
  ClosedLoop(const PolynomialSystem& sys, Controller ctl) : ClosedLoop(QuadraticPlant::from_system(sys), std::move(ctl)) {}

  const QuadraticPlant& plant() const { return plant_; }
  const Controller& controller() const { return ctl_; }
  int nx() const { return plant_.nx; }

  /// Acl(x) = Abar(x) + Bbar(x) Kbar + E(Kbar xbar) Kbar.
  Matrix a_cl(const Vector& x) const {
    const Matrix kb = ctl_.k_bar(x);
    const Vector v = kb * linalg::augment(x);
    return plant_.a_bar.evaluate(x) + plant_.b_bar.evaluate(x) * kb + plant_.e(v) * kb;
  }

  Vector step(const Vector& x) const { return (a_cl(x) * linalg::augment(x)).head(nx()); }

  PolyMatrix a_cl_poly() const {
    const PolyMatrix kb = ctl_.k_bar_poly();
    PolyMatrix out = plant_.a_bar + plant_.b_bar * kb;
    if (!plant_.e_terms.empty()) {
      const int nv = nx();
      PolyMatrix xs(nx() + 1, 1, nv);
      for (int k = 0; k < nx(); ++k) xs(k, 0) = Polynomial::variable(nv, k);
      xs(nx(), 0) = Polynomial::constant(nv, 1.0);
      const PolyMatrix v = kb * xs;
      for (int j = 0; j < plant_.m; ++j) {
        PolyMatrix scaled = PolyMatrix::constant(plant_.e_terms[static_cast<size_t>(j)], nv) * kb;
        for (int r = 0; r < scaled.rows(); ++r)
          for (int c = 0; c < scaled.cols(); ++c) out(r, c) += v(j, 0) * scaled(r, c);
      }
    }
    return out;
  }

  std::vector<Vector> simulate(const Vector& x0, int steps) const {
    std::vector<Vector> xs{x0};
    Vector x = x0;
    for (int t = 0; t < steps; ++t) {
      x = step(x);
      QNN_THROW_UNLESS(x.allFinite() && x.cwiseAbs().maxCoeff() <= kDivergenceGuard, ErrorCode::NonFinite,
                       "closed loop diverged at step " + std::to_string(t + 1));
      xs.push_back(x);
    }
    return xs;
  }

 private:
  QuadraticPlant plant_;
  Controller ctl_;
};

/// Pbar = [[P, -P x*], [-x*' P, x*' P x*]].
inline Matrix lyapunov_pbar(const Matrix& p, const Vector& x_star) {
  const auto n = p.rows();
  Matrix pb(n + 1, n + 1);
  pb.topLeftCorner(n, n) = p;
  pb.topRightCorner(n, 1) = -p * x_star;
  pb.bottomLeftCorner(1, n) = -(x_star.transpose() * p);
  pb(n, n) = x_star.dot(p * x_star);
  return pb;
}

enum class VerifyMethod { Grid, Sos };

struct VerifyOptions {
  VerifyMethod method = VerifyMethod::Grid;
  int grid_points = 41;
  double tolerance = 1e-9;
  int half_degree = -1;
  sdp::SolverConfig solver;
};

struct LyapunovReport {
  bool holds = false;
  VerifyMethod method = VerifyMethod::Grid;
  double worst_eigenvalue = 0.0;  // grid: max eigenvalue of Acl' Pbar Acl - Pbar
  Vector worst_point;
  double sos_margin = 0.0;  // SOS: largest certified t in Pbar - Acl' Pbar Acl >= t I
  bool reduced = false;     // last row/column dropped

  void require() const {
    if (holds) return;
    std::string msg = "Lyapunov decrease condition fails";
    if (method == VerifyMethod::Grid) {
      msg += ": eigenvalue " + std::to_string(worst_eigenvalue) + " at x = [";
      for (int i = 0; i < worst_point.size(); ++i) msg += (i ? ", " : "") + std::to_string(worst_point(i));
      msg += "]";
    } else {
      msg += ": no SOS certificate (margin " + std::to_string(sos_margin) + ")";
    }
    throw Error(ErrorCode::Violated, msg);
  }
};

inline double lyapunov_decrease_eigenvalue(const ClosedLoop& cl, const Matrix& pbar, const Vector& x) {
  const Matrix a = cl.a_cl(x);
  const Matrix d = a.transpose() * pbar * a - pbar;
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (d + d.transpose()), Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

inline LyapunovReport verify_lyapunov(const ClosedLoop& cl, const Matrix& pbar, const Region& region,
                                      const VerifyOptions& opt = {}) {
  const int n = cl.nx();
  QNN_THROW_UNLESS(pbar.rows() == n + 1 && pbar.cols() == n + 1, ErrorCode::DimensionMismatch,
                   "Pbar must be (nx+1) x (nx+1)");
  LyapunovReport rep;
  rep.method = opt.method;
  if (opt.method == VerifyMethod::Grid) {
    QNN_THROW_UNLESS(region.is_box(), ErrorCode::RegionUnsupported, "grid verification needs a bounded region");
    rep.worst_eigenvalue = -std::numeric_limits<double>::infinity();
    for (const auto& x : region.grid(opt.grid_points)) {
      const double ev = lyapunov_decrease_eigenvalue(cl, pbar, x);
      if (ev > rep.worst_eigenvalue) {
        rep.worst_eigenvalue = ev;
        rep.worst_point = x;
      }
    }
    rep.holds = rep.worst_eigenvalue <= opt.tolerance;
    return rep;
  }

  const PolyMatrix acl = cl.a_cl_poly();
  const PolyMatrix pb = PolyMatrix::constant(pbar, n);
  PolyMatrix d = pb - acl.transpose() * pb * acl;
  // Zero set point with a zero last row/column of Pbar and Acl e_last = e_last.
  const bool zero_corner = pbar.row(n).cwiseAbs().maxCoeff() == 0.0;
  bool last_col_unit = true;
  for (int r = 0; r < n; ++r)
    if (!acl(r, n).pruned(0.0).is_zero()) last_col_unit = false;
  if (zero_corner && last_col_unit) {
    d = d.block(0, 0, n, n);
    rep.reduced = true;
  }
  const auto margin = sos_margin(d, region, opt.half_degree, opt.solver);
  rep.sos_margin = margin.margin;
  rep.holds = margin.status == sdp::Status::Optimal && margin.margin >= -opt.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Synthesis

enum class SynthesisObjective { Feasibility, MinCondition };

struct SynthesisOptions {
  double epsilon = 0.1;
  Region region;
  SynthesisObjective objective = SynthesisObjective::MinCondition;
  int gain_degree = -1;  // -1: degree of A(x)
  int half_degree = -1;
  sdp::SolverConfig solver;
};

struct SynthesisResult {
  Matrix p;
  PolyMatrix l;  // L(x)
  Controller controller;
  double eta = 0.0;
  double condition_number = 0.0;
  bool ill_conditioned = false;
  sdp::ConicSolution solution;
};

namespace detail {

inline void throw_on_status(const sdp::ConicSolution& sol, const std::string& what) {
  switch (sol.status) {
    case sdp::Status::Optimal: return;
    case sdp::Status::Infeasible: throw Error(ErrorCode::Infeasible, what + " is infeasible");
    case sdp::Status::Unbounded: throw Error(ErrorCode::Unbounded, what + " is unbounded");
    case sdp::Status::MaxIterations:
      throw Error(ErrorCode::SolverFailed, what + ": solver stopped after " + std::to_string(sol.iterations) +
                                               " iterations (primal residual " + std::to_string(sol.primal_residual) +
                                               ")");
  }
}

/// Symmetric matrix of scalar decision expressions backed by a PSD block.
inline std::vector<std::vector<sdp::LinearExpr>> block_exprs(const sdp::PsdBlock& b) {
  std::vector<std::vector<sdp::LinearExpr>> e(static_cast<size_t>(b.dim), std::vector<sdp::LinearExpr>(static_cast<size_t>(b.dim)));
  for (int i = 0; i < b.dim; ++i)
    for (int j = 0; j < b.dim; ++j) e[static_cast<size_t>(i)][static_cast<size_t>(j)] = sdp::var_expr(b.entry(i, j));
  return e;
}

}  // namespace detail

/// Returns the matrix [[(1-eps) P - eps I, (A P + B L)'], [A P + B L, P]].
inline AffinePolyMatrix synthesis_lmi(const PolynomialSystem& sys, const AffinePolyMatrix& p, const AffinePolyMatrix& l,
                                      double epsilon) {
  const int n = sys.nx;
  const AffinePolyMatrix apbl = sys.a * p + sys.b * l;
  AffinePolyMatrix m(2 * n, 2 * n, n);
  AffinePolyMatrix tl = (1.0 - epsilon) * p;
  for (int i = 0; i < n; ++i) tl(i, i).add_term(Monomial(static_cast<size_t>(n), 0), sdp::LinearExpr(-epsilon));
  m.set_block(0, 0, tl);
  m.set_block(0, n, apbl.transpose());
  m.set_block(n, 0, apbl);
  m.set_block(n, n, p);
  return m;
}

/// Smallest eigenvalue of the synthesis matrix at one state.
inline double synthesis_lmi_min_eigenvalue(const PolynomialSystem& sys, const Matrix& p, const PolyMatrix& l,
                                           double epsilon, const Vector& x) {
  const int n = sys.nx;
  const Matrix apbl = sys.a.evaluate(x) * p + sys.b.evaluate(x) * l.evaluate(x);
  Matrix m(2 * n, 2 * n);
  m << (1.0 - epsilon) * p - epsilon * Matrix::Identity(n, n), apbl.transpose(), apbl, p;
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

/// Searches P >= I and a polynomial L(x) for the stabilizing LMI; the
/// controller is u = L(x) P^-1 x.
inline SynthesisResult synthesize_lmi(const PolynomialSystem& sys, const SynthesisOptions& opt = {}) {
  QNN_THROW_UNLESS(opt.epsilon > 0.0 && opt.epsilon < 1.0, ErrorCode::InvalidArgument, "epsilon must lie in (0, 1)");
  const int n = sys.nx, m = sys.m;
  QNN_THROW_UNLESS(m >= 1, ErrorCode::InvalidArgument, "system has no inputs");
  const int gdeg = opt.gain_degree >= 0 ? opt.gain_degree : sys.a.degree();

  sdp::ConicProblem prob;
  const sdp::PsdBlock s = prob.add_psd_block(n);
  auto pe = detail::block_exprs(s);
  for (int i = 0; i < n; ++i) pe[static_cast<size_t>(i)][static_cast<size_t>(i)].add_constant(1.0);
  const AffinePolyMatrix p = affine_constant(pe, n);

  const auto monos = monomials_up_to(n, gdeg);
  std::vector<std::vector<std::vector<int>>> lvars(static_cast<size_t>(m));
  AffinePolyMatrix l(m, n, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (const auto& mono : monos) {
        const int v = prob.add_variable();
        l(i, j).add_term(mono, sdp::var_expr(v));
      }

  add_matrix_sos_on_region(prob, synthesis_lmi(sys, p, l, opt.epsilon), opt.region, opt.half_degree);

  int eta = -1;
  if (opt.objective == SynthesisObjective::MinCondition) {
    eta = prob.add_variable();
    const sdp::PsdBlock t = prob.add_psd_block(n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        sdp::LinearExpr e = sdp::var_expr(t.entry(i, j)) + pe[static_cast<size_t>(i)][static_cast<size_t>(j)];
        if (i == j) e.add(eta, -1.0);
        prob.add_equality(std::move(e), 0.0);
      }
    prob.add_cost(sdp::var_expr(eta));
  }

  SynthesisResult res;
  res.solution = sdp::solve(prob, opt.solver);
  detail::throw_on_status(res.solution, "controller synthesis");
  const auto& vals = res.solution.values;
  res.p = res.solution.block(s) + Matrix::Identity(n, n);
  res.l = evaluate_coefficients(l, vals);
  if (eta >= 0) res.eta = vals[static_cast<size_t>(eta)];
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(res.p, Eigen::EigenvaluesOnly).eigenvalues();
  res.condition_number = ev.maxCoeff() / ev.minCoeff();
  res.ill_conditioned = res.condition_number > 1e10;
  const Matrix pinv = res.p.llt().solve(Matrix::Identity(n, n));
  res.controller = Controller::polynomial(res.l * PolyMatrix::constant(pinv, n));
  return res;
}

// ---------------------------------------------------------------------------
// Guaranteed cost

struct CostBoundOptions {
  Region region;
  int half_degree = -1;
  double unbounded_trace = 1e10;
  sdp::SolverConfig solver;
};

struct CostBoundResult {
  Matrix p;
  double trace = 0.0;
  sdp::ConicSolution solution;
};

/// W(x) = [[A'PA - P + Q, A'PB], [B'PA, R + B'PB]].
template <class C>
PolyMatrixT<C> cost_matrix(const PolynomialSystem& sys, const PolyMatrixT<C>& p, const Matrix& q, const Matrix& r) {
  const int n = sys.nx, m = sys.m;
  const PolyMatrix at = sys.a.transpose(), bt = sys.b.transpose();
  PolyMatrixT<C> w(n + m, n + m, n);
  PolyMatrixT<C> tl = at * p * sys.a - p;
  PolyMatrixT<C> tr = at * p * sys.b;
  PolyMatrixT<C> br = bt * p * sys.b;
  const PolyMatrix qp = PolyMatrix::constant(q, n), rp = PolyMatrix::constant(r, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (const auto& [mono, c] : qp(i, j).terms()) tl(i, j).add_term(mono, C(c));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (const auto& [mono, c] : rp(i, j).terms()) br(i, j).add_term(mono, C(c));
  w.set_block(0, 0, tl);
  w.set_block(0, n, tr);
  w.set_block(n, 0, tr.transpose());
  w.set_block(n, n, br);
  return w;
}

/// Maximizes trace(P) subject to W(x) being SOS; x0' P x0 lower-bounds the
/// infinite-horizon cost of any controller.
inline CostBoundResult cost_lower_bound(const PolynomialSystem& sys, const Matrix& q, const Matrix& r,
                                        const CostBoundOptions& opt = {}) {
  const int n = sys.nx, m = sys.m;
  QNN_THROW_UNLESS(q.rows() == n && q.cols() == n && r.rows() == m && r.cols() == m, ErrorCode::DimensionMismatch,
                   "Q must be nx x nx and R m x m");
  sdp::ConicProblem prob;
  std::vector<std::vector<sdp::LinearExpr>> pe(static_cast<size_t>(n), std::vector<sdp::LinearExpr>(static_cast<size_t>(n)));
  sdp::LinearExpr trace;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const int v = prob.add_variable();
      pe[static_cast<size_t>(i)][static_cast<size_t>(j)] = pe[static_cast<size_t>(j)][static_cast<size_t>(i)] = sdp::var_expr(v);
      if (i == j) trace.add(v, 1.0);
    }
  const AffinePolyMatrix p = affine_constant(pe, n);
  add_matrix_sos_on_region(prob, cost_matrix(sys, p, q, r), opt.region, opt.half_degree);
  prob.add_cost(trace, -1.0);

  CostBoundResult res;
  res.solution = sdp::solve(prob, opt.solver);
  detail::throw_on_status(res.solution, "cost bound");
  res.p = Matrix(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) res.p(i, j) = pe[static_cast<size_t>(i)][static_cast<size_t>(j)].evaluate(res.solution.values);
  res.trace = res.p.trace();
  QNN_THROW_UNLESS(res.trace <= opt.unbounded_trace, ErrorCode::Unbounded,
                   "cost bound trace " + std::to_string(res.trace) + " exceeds " + std::to_string(opt.unbounded_trace));
  return res;
}

inline double cost_matrix_min_eigenvalue(const PolynomialSystem& sys, const Matrix& p, const Matrix& q,
                                         const Matrix& r, const Vector& x) {
  const Matrix w = cost_matrix(sys, PolyMatrix::constant(p, sys.nx), q, r).evaluate(x);
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (w + w.transpose()), Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

/// u = -(R + B'PB)^-1 B'PA x. Polynomial when B is constant; otherwise
/// evaluated pointwise and checked for invertibility on the region grid.
inline Controller heuristic_controller(const PolynomialSystem& sys, const Matrix& p, const Matrix& r,
                                       const Region& region = {}, int grid_points = 41) {
  const int n = sys.nx, m = sys.m;
  QNN_THROW_UNLESS(p.rows() == n && p.cols() == n && r.rows() == m && r.cols() == m, ErrorCode::DimensionMismatch,
                   "P must be nx x nx and R m x m");
  auto gram = [&](const Matrix& b) {
    const Matrix g = r + b.transpose() * p * b;
    Eigen::JacobiSVD<Matrix> svd(g);
    const Vector sv = svd.singularValues();
    QNN_THROW_UNLESS(sv.minCoeff() > 1e-12 * std::max(1.0, sv.maxCoeff()), ErrorCode::SingularGain,
                     "R + B'PB is singular");
    return g;
  };
  if (sys.b.degree() == 0) {
    const Matrix b = sys.b.constant_part();
    const Matrix g = gram(b);
    const Matrix left = -g.fullPivLu().solve(b.transpose() * p);
    return Controller::polynomial(PolyMatrix::constant(left, n) * sys.a);
  }
  if (region.is_box())
    for (const auto& x : region.grid(grid_points)) gram(sys.b.evaluate(x));
  else
    gram(sys.b.evaluate(Vector::Zero(n)));
  Controller c = Controller::polynomial(PolyMatrix(m, n, n));
  c.rational_gain = [sys, p, r](const Vector& x) {
    const Matrix b = sys.b.evaluate(x);
    const Matrix g = r + b.transpose() * p * b;
    return Matrix(-g.fullPivLu().solve(b.transpose() * p * sys.a.evaluate(x)));
  };
  return c;
}

/// Eigenvalues of the constant part of a closed-loop matrix polynomial.
inline std::vector<std::complex<double>> constant_part_eigenvalues(const PolyMatrix& a) {
  Eigen::EigenSolver<Matrix> es(a.constant_part(), false);
  std::vector<std::complex<double>> out;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()(i));
  std::sort(out.begin(), out.end(), [](auto x, auto y) { return x.real() > y.real(); });
  return out;
}

/// A(x) + B(x) K(x) for a controller with zero set point.
inline PolyMatrix closed_loop_matrix(const PolynomialSystem& sys, const Controller& ctl) {
  QNN_THROW_UNLESS(ctl.is_polynomial(), ErrorCode::DegreeTooHigh, "controller gain is rational, not polynomial");
  return sys.a + sys.b * ctl.gain;
}

}  // namespace qnn
