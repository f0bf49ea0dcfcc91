#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <random>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/network.hpp"
#include "qnn/sdp/solver.hpp"

namespace qnn {

enum class Loss { SquaredL2, InfinityNorm };

struct TrainingConfig {
  ActivationParams activation;
  double beta = 0.0;
  Loss loss = Loss::SquaredL2;
  bool offset_augment = false;
  /// Solve separable outputs concurrently.
  bool parallel = true;
  /// Return the last iterate when the solver stops at its iteration cap.
  bool allow_inaccurate = false;
  sdp::SolverConfig solver;
};

struct OutputVariables {
  Matrix zplus;
  Matrix zminus;
};

/// Solution of the convex training program, one (Z+, Z-) pair per output.
struct TrainingVariables {
  std::vector<OutputVariables> outputs;
};

struct SolveDiagnostics {
  sdp::Status status = sdp::Status::MaxIterations;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  QuadraticNetwork network;
  TrainingVariables variables;
  std::vector<SolveDiagnostics> diagnostics;
  double objective = 0.0;
};

/// Conic program plus handles to its structured variables.
struct TrainingProblem {
  sdp::ConicProblem problem;
  std::vector<sdp::PsdBlock> plus, minus;
  int epigraph = -1;
  std::vector<int> residuals;
  int n = 0;
  int p = 0;
};

namespace detail {

inline Matrix with_offset(const Matrix& x, bool offset) {
  if (!offset) return x;
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

inline void check_training_data(const Matrix& x, const Matrix& y) {
  QNN_THROW_UNLESS(x.rows() >= 1 && x.cols() >= 1 && y.cols() >= 1, ErrorCode::EmptyData,
                   "training data is empty");
  QNN_THROW_UNLESS(x.rows() == y.rows(), ErrorCode::DimensionMismatch,
                   "X and Y have different sample counts");
  QNN_THROW_UNLESS(x.allFinite() && y.allFinite(), ErrorCode::NonFinite, "training data is not finite");
}

// Prediction of sample xi as a linear function of the entries of Z+ (sign +1)
// or Z- (sign -1).
inline void add_prediction_terms(sdp::LinearExpr& e, const sdp::PsdBlock& blk, const Vector& xi,
                                 const ActivationParams& act, double sign) {
  const int n = static_cast<int>(xi.size());
  for (int j = 0; j < n; ++j) {
    e.add(blk.entry(j, j), sign * (act.a * xi(j) * xi(j) + act.c));
    for (int i = 0; i < j; ++i) e.add(blk.entry(i, j), sign * 2.0 * act.a * xi(i) * xi(j));
    e.add(blk.entry(j, n), sign * act.b * xi(j));
  }
}

}  // namespace detail

inline TrainingProblem build_problem(const Matrix& x_in, const Matrix& y, const TrainingConfig& cfg) {
  detail::check_training_data(x_in, y);
  QNN_THROW_UNLESS(cfg.beta >= 0.0 && std::isfinite(cfg.beta), ErrorCode::InvalidArgument,
                   "beta must be finite and nonnegative");
  cfg.activation.validate();
  const Matrix x = detail::with_offset(x_in, cfg.offset_augment);
  TrainingProblem tp;
  tp.n = static_cast<int>(x.cols());
  tp.p = static_cast<int>(y.cols());
  const int n = tp.n;
  const auto nsamp = x.rows();
  auto& prob = tp.problem;
  for (int k = 0; k < tp.p; ++k) {
    tp.plus.push_back(prob.add_psd_block(n + 1));
    tp.minus.push_back(prob.add_psd_block(n + 1));
  }
  for (int k = 0; k < tp.p; ++k)
    for (const auto& blk : {tp.plus[static_cast<size_t>(k)], tp.minus[static_cast<size_t>(k)]}) {
      sdp::LinearExpr tr = sdp::var_expr(blk.entry(n, n));
      tr -= sdp::trace_of(blk, 0, n);
      prob.add_equality(tr, 0.0);
      if (cfg.beta > 0.0) prob.add_cost(sdp::var_expr(blk.entry(n, n)), cfg.beta);
    }

  if (cfg.loss == Loss::InfinityNorm) tp.epigraph = prob.add_variable(sdp::VarKind::Free);
  std::vector<sdp::LinearExpr> epi_terms;
  for (int k = 0; k < tp.p; ++k) {
    for (Eigen::Index i = 0; i < nsamp; ++i) {
      sdp::LinearExpr pred;
      const Vector xi = x.row(i).transpose();
      detail::add_prediction_terms(pred, tp.plus[static_cast<size_t>(k)], xi, cfg.activation, 1.0);
      detail::add_prediction_terms(pred, tp.minus[static_cast<size_t>(k)], xi, cfg.activation, -1.0);
      if (cfg.loss == Loss::SquaredL2) {
        const int r = prob.add_variable(sdp::VarKind::Free);
        tp.residuals.push_back(r);
        pred.add(r, -1.0);
        prob.add_equality(pred, y(i, k));
        // sum of squared residuals
        prob.add_quadratic_cost(r, 2.0);
      } else {
        pred.add_constant(-y(i, k));
        epi_terms.push_back(pred);
        epi_terms.push_back(-1.0 * pred);
      }
    }
  }
  if (cfg.loss == Loss::InfinityNorm) {
    prob.add_epigraph(tp.epigraph, epi_terms);
    prob.add_cost(sdp::var_expr(tp.epigraph));
  }
  return tp;
}

/// Zbar from the plus/minus pair of one output.
inline Matrix assemble_zbar(const Matrix& zp, const Matrix& zm, const ActivationParams& act) {
  const int n = static_cast<int>(zp.rows()) - 1;
  const Matrix d = zp - zm;
  Matrix z(n + 1, n + 1);
  z.topLeftCorner(n, n) = act.a * d.topLeftCorner(n, n);
  z.topRightCorner(n, 1) = 0.5 * act.b * d.topRightCorner(n, 1);
  z.bottomLeftCorner(1, n) = z.topRightCorner(n, 1).transpose();
  z(n, n) = act.c * d.topLeftCorner(n, n).trace();
  return 0.5 * (z + z.transpose());
}

namespace detail {

inline SolveDiagnostics diagnostics_of(const sdp::ConicSolution& s) {
  return {s.status, s.iterations, s.primal_residual, s.dual_residual, s.objective_value,
          s.setup_seconds + s.solve_seconds};
}

inline void require_usable(const sdp::ConicSolution& s, bool allow_inaccurate) {
  if (s.status == sdp::Status::Optimal) return;
  if (s.status == sdp::Status::MaxIterations && allow_inaccurate) return;
  throw Error(ErrorCode::SolverFailed,
              "training solve ended with status " + std::string(sdp::to_string(s.status)));
}

}  // namespace detail

inline TrainResult train(const Matrix& x, const Matrix& y, const TrainingConfig& cfg) {
  detail::check_training_data(x, y);
  const int p = static_cast<int>(y.cols());
  TrainResult res;
  std::vector<Matrix> zbars(static_cast<size_t>(p));
  res.variables.outputs.resize(static_cast<size_t>(p));

  if (cfg.loss == Loss::SquaredL2 && p > 1) {
    auto solve_one = [&](int k) {
      TrainingProblem tp = build_problem(x, y.col(k), cfg);
      sdp::ConicSolution s = sdp::solve(tp.problem, cfg.solver);
      return std::make_pair(std::move(tp), std::move(s));
    };
    std::vector<std::future<std::pair<TrainingProblem, sdp::ConicSolution>>> jobs;
    for (int k = 0; k < p; ++k)
      jobs.push_back(std::async(cfg.parallel ? std::launch::async : std::launch::deferred, solve_one, k));
    for (int k = 0; k < p; ++k) {
      auto [tp, s] = jobs[static_cast<size_t>(k)].get();
      detail::require_usable(s, cfg.allow_inaccurate);
      OutputVariables ov{s.block(tp.plus[0]), s.block(tp.minus[0])};
      zbars[static_cast<size_t>(k)] = assemble_zbar(ov.zplus, ov.zminus, cfg.activation);
      res.variables.outputs[static_cast<size_t>(k)] = std::move(ov);
      res.diagnostics.push_back(detail::diagnostics_of(s));
      res.objective += s.objective_value;
    }
  } else {
    TrainingProblem tp = build_problem(x, y, cfg);
    const sdp::ConicSolution s = sdp::solve(tp.problem, cfg.solver);
    detail::require_usable(s, cfg.allow_inaccurate);
    for (int k = 0; k < p; ++k) {
      OutputVariables ov{s.block(tp.plus[static_cast<size_t>(k)]), s.block(tp.minus[static_cast<size_t>(k)])};
      zbars[static_cast<size_t>(k)] = assemble_zbar(ov.zplus, ov.zminus, cfg.activation);
      res.variables.outputs[static_cast<size_t>(k)] = std::move(ov);
    }
    res.diagnostics.push_back(detail::diagnostics_of(s));
    res.objective = s.objective_value;
  }
  const int n = static_cast<int>(x.cols()) + (cfg.offset_augment ? 1 : 0);
  res.network = QuadraticNetwork(n, cfg.activation, std::move(zbars));
  res.network.set_offset_augmented(cfg.offset_augment);
  return res;
}

/// Loss part of the training objective for an arbitrary network.
inline double training_loss(const QuadraticNetwork& net, const Matrix& x, const Matrix& y, Loss loss) {
  const Matrix r = net.evaluate_rows(x) - y;
  return loss == Loss::SquaredL2 ? r.squaredNorm() : (r.size() ? r.cwiseAbs().maxCoeff() : 0.0);
}

inline int numerical_rank(const Matrix& z, double tol) {
  if (z.size() == 0) return 0;
  const Vector ev = linalg::eig(0.5 * (z + z.transpose())).eigenvalues();
  return static_cast<int>((ev.array() > tol).count());
}

inline int minimal_neuron_count(const TrainingVariables& vars, double tol = 1e-5) {
  int m = 0;
  for (const auto& o : vars.outputs) m += numerical_rank(o.zplus, tol) + numerical_rank(o.zminus, tol);
  return m;
}

struct PrimalResult {
  NeuronList neurons;
  double loss = 0.0;       // loss part only
  double objective = 0.0;  // loss + beta * sum |alpha|
};

/// Non-convex primal training by alternating exact lasso updates of alpha with
/// projected gradient steps on the unit-norm first-layer weights. Only the
/// squared loss is supported. Used to probe the zero duality gap.
inline PrimalResult primal_descent_oracle(const Matrix& x_in, const Matrix& y, const TrainingConfig& cfg,
                                          int m, unsigned seed, int restarts = 20, int iterations = 1500) {
  detail::check_training_data(x_in, y);
  QNN_THROW_UNLESS(cfg.loss == Loss::SquaredL2, ErrorCode::InvalidArgument,
                   "primal oracle supports the squared loss only");
  const Matrix x = detail::with_offset(x_in, cfg.offset_augment);
  const ActivationParams act = cfg.activation;
  const int n = static_cast<int>(x.cols());
  const int p = static_cast<int>(y.cols());
  PrimalResult best;
  best.neurons.n_inputs = n;
  best.neurons.outputs.assign(static_cast<size_t>(p), {});
  best.loss = y.squaredNorm();
  best.objective = best.loss;
  if (m <= 0) return best;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;

  // Feature matrix H(i, j) = sigma(x_i' w_j).
  auto features = [&](const Matrix& w) {
    Matrix h = x * w;
    return h.unaryExpr([&](double z) { return act(z); }).eval();
  };
  auto objective = [&](const Matrix& h, const Matrix& alpha) {
    return (h * alpha - y).squaredNorm() + cfg.beta * alpha.cwiseAbs().sum();
  };
  // Exact coordinate-descent lasso for alpha given features.
  auto solve_alpha = [&](const Matrix& h, Matrix& alpha) {
    const Vector col_sq = h.colwise().squaredNorm().transpose();
    for (int sweep = 0; sweep < 200; ++sweep) {
      double change = 0.0;
      for (int k = 0; k < p; ++k) {
        Vector r = y.col(k) - h * alpha.col(k);
        for (int j = 0; j < m; ++j) {
          if (col_sq(j) <= 1e-300) {
            alpha(j, k) = 0.0;
            continue;
          }
          const double old = alpha(j, k);
          const double rho = h.col(j).dot(r) + col_sq(j) * old;
          const double thr = 0.5 * cfg.beta;
          const double nv = (rho > thr ? rho - thr : (rho < -thr ? rho + thr : 0.0)) / col_sq(j);
          if (nv != old) {
            r -= (nv - old) * h.col(j);
            alpha(j, k) = nv;
            change = std::max(change, std::abs(nv - old));
          }
        }
      }
      if (change < 1e-14) break;
    }
  };

  for (int rs = 0; rs < restarts; ++rs) {
    Matrix w(n, m);
    for (int i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
    w.colwise().normalize();
    Matrix alpha = Matrix::Zero(m, p);
    Matrix h = features(w);
    solve_alpha(h, alpha);
    double f = objective(h, alpha);
    double step = 1.0;
    for (int it = 0; it < iterations; ++it) {
      // Gradient of the smooth loss in w.
      const Matrix r = h * alpha - y;                        // N x p
      const Matrix dh = 2.0 * r * alpha.transpose();         // N x m, d loss / d H
      const Matrix z = x * w;                                // N x m
      const Matrix dsig = (2.0 * act.a * z.array() + act.b).matrix();
      const Matrix gw = x.transpose() * dh.cwiseProduct(dsig);  // n x m
      // Project onto the tangent space of the sphere.
      Matrix g = gw;
      for (int j = 0; j < m; ++j) g.col(j) -= w.col(j).dot(gw.col(j)) * w.col(j);
      if (g.norm() < 1e-13) break;
      bool improved = false;
      for (int ls = 0; ls < 40; ++ls) {
        Matrix wn = w - step * g;
        wn.colwise().normalize();
        const Matrix hn = features(wn);
        Matrix an = alpha;
        solve_alpha(hn, an);
        const double fn = objective(hn, an);
        if (fn < f - 1e-4 * step * g.squaredNorm()) {
          w = std::move(wn);
          h = hn;
          alpha = std::move(an);
          f = fn;
          step *= 1.5;
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    if (f < best.objective) {
      best.objective = f;
      best.loss = (h * alpha - y).squaredNorm();
      best.neurons.outputs.assign(static_cast<size_t>(p), {});
      for (int k = 0; k < p; ++k)
        for (int j = 0; j < m; ++j)
          if (alpha(j, k) != 0.0) best.neurons.outputs[static_cast<size_t>(k)].push_back({w.col(j), alpha(j, k)});
    }
  }
  return best;
}

}  // namespace qnn
