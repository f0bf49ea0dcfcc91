#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string_view>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/sdp/problem.hpp"

namespace qnn::sdp {

enum class Status { Optimal, Infeasible, Unbounded, MaxIterations };

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::Unbounded: return "Unbounded";
    case Status::MaxIterations: return "MaxIterations";
  }
  return "Unknown";
}

struct IterationInfo {
  int iteration = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double rho = 0.0;
};

struct SolverConfig {
  double eps_abs = 1e-7;
  double eps_rel = 0.0;
  double eps_psd = 1e-8;
  double eps_infeasible = 1e-7;
  int max_iterations = 200000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 50;
  double adaptive_rho_tolerance = 5.0;
  int scaling_iterations = 10;
  int check_interval = 10;
  std::function<void(const IterationInfo&)> progress;
  int progress_interval = 0;
};

/// Residuals are infinity norms in the original units. The dual residual is
/// divided by max(1, largest linear cost coefficient).
struct ConicSolution {
  Status status = Status::MaxIterations;
  std::vector<double> values;
  /// Multipliers of the linear rows, in problem order.
  std::vector<double> row_duals;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  double objective_value = 0.0;
  double setup_seconds = 0.0;
  double solve_seconds = 0.0;

  double value(int var) const { return values.at(static_cast<size_t>(var)); }

  Matrix block(const PsdBlock& b) const {
    Matrix m(b.dim, b.dim);
    for (int j = 0; j < b.dim; ++j)
      for (int i = 0; i <= j; ++i) m(i, j) = m(j, i) = value(b.entry(i, j));
    return m;
  }

  double evaluate(const LinearExpr& e) const { return e.evaluate(values); }
};

/// Euclidean projection of a symmetric matrix onto the PSD cone.
inline Matrix project_psd(const Matrix& m) {
  linalg::require_symmetric(m, 1e-12, "project_psd input");
  if (m.size() == 0) return m;
  const auto es = linalg::eig(0.5 * (m + m.transpose()));
  const Vector clipped = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
}

namespace detail {

inline constexpr double kSqrt2 = 1.4142135623730951;

// Projects one svec-coordinate PSD block in place. Off-diagonal svec
// coordinates carry a sqrt(2) factor so the map is an isometry.
inline void project_svec_block(double* v, int dim, Matrix& work) {
  work.resize(dim, dim);
  for (int j = 0; j < dim; ++j) {
    work(j, j) = v[linalg::packed_index(j, j)];
    for (int i = 0; i < j; ++i) work(i, j) = work(j, i) = v[linalg::packed_index(i, j)] / kSqrt2;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(work);
  const Vector lam = es.eigenvalues();
  if (lam(0) >= 0.0) return;
  const Vector clipped = lam.cwiseMax(0.0);
  work = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  for (int j = 0; j < dim; ++j) {
    v[linalg::packed_index(j, j)] = work(j, j);
    for (int i = 0; i < j; ++i) v[linalg::packed_index(i, j)] = kSqrt2 * 0.5 * (work(i, j) + work(j, i));
  }
}

inline double svec_block_min_eig(const double* v, int dim, Matrix& work) {
  work.resize(dim, dim);
  for (int j = 0; j < dim; ++j) {
    work(j, j) = v[linalg::packed_index(j, j)];
    for (int i = 0; i < j; ++i) work(i, j) = work(j, i) = v[linalg::packed_index(i, j)] / kSqrt2;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(work, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// ADMM in the style of OSQP, extended with PSD cones on variable copies:
//
//   min 1/2 x'Px + q'x  s.t.  Cx = z_c in [l, u],  x = z_k in K.
//
// The x-update solves (P + sigma I + rho_k I + C' R C) x = rhs with P
// diagonal, either densely in x-space or through the Woodbury identity in
// row space, whichever is smaller.
class AdmmSolver {
 public:
  AdmmSolver(const ConicProblem& problem, SolverConfig config)
      : problem_(problem), cfg_(std::move(config)) {}

  ConicSolution run() {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    setup();
    const auto t1 = Clock::now();
    ConicSolution sol = iterate();
    sol.setup_seconds = std::chrono::duration<double>(t1 - t0).count();
    sol.solve_seconds = std::chrono::duration<double>(Clock::now() - t1).count();
    return sol;
  }

 private:
  void setup() {
    problem_.validate();
    n_ = problem_.num_variables();
    m_ = problem_.num_rows();
    const auto& kinds = problem_.kinds();

    svec_.assign(static_cast<size_t>(n_), 1.0);
    for (const auto& b : problem_.blocks())
      for (int j = 0; j < b.dim; ++j)
        for (int i = 0; i < j; ++i) svec_[static_cast<size_t>(b.entry(i, j))] = 1.0 / kSqrt2;

    std::vector<Eigen::Triplet<double>> trips;
    size_t nnz = 0;
    for (const auto& r : problem_.rows()) nnz += r.terms.size();
    trips.reserve(nnz);
    l_.resize(m_);
    u_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      const auto& r = problem_.rows()[static_cast<size_t>(i)];
      for (const auto& [v, c] : r.terms) trips.emplace_back(i, v, c * svec_[static_cast<size_t>(v)]);
      l_(i) = r.lower;
      u_(i) = r.upper;
    }
    C_.resize(m_, n_);
    C_.setFromTriplets(trips.begin(), trips.end());
    trips.clear();
    trips.shrink_to_fit();

    P_.resize(n_);
    q_.resize(n_);
    for (int j = 0; j < n_; ++j) {
      const double s = svec_[static_cast<size_t>(j)];
      P_(j) = problem_.quadratic_cost()[static_cast<size_t>(j)] * s * s;
      q_(j) = problem_.linear_cost()[static_cast<size_t>(j)] * s;
    }

    equilibrate();
    for (int i = 0; i < m_; ++i) {
      if (std::isfinite(l_(i))) l_(i) *= E_(i);
      if (std::isfinite(u_(i))) u_(i) *= E_(i);
    }

    is_eq_.assign(static_cast<size_t>(m_), false);
    for (int i = 0; i < m_; ++i) is_eq_[static_cast<size_t>(i)] = problem_.rows()[static_cast<size_t>(i)].is_equality();

    cone_vars_free_.assign(static_cast<size_t>(n_), false);
    cone_vars_nonneg_.assign(static_cast<size_t>(n_), false);
    for (int j = 0; j < n_; ++j) {
      cone_vars_free_[static_cast<size_t>(j)] = kinds[static_cast<size_t>(j)] == VarKind::Free;
      cone_vars_nonneg_[static_cast<size_t>(j)] = kinds[static_cast<size_t>(j)] == VarKind::NonNegative;
    }

    cost_scale_ = 1.0;
    for (double q : problem_.linear_cost()) cost_scale_ = std::max(cost_scale_, std::abs(q));
    rho_ = cfg_.rho;
    factor();
  }

  void equilibrate() {
    D_ = Vector::Ones(n_);
    E_ = Vector::Ones(m_);
    c_ = 1.0;
    constexpr double kMin = 1e-4, kMax = 1e4;
    const auto& blocks = problem_.blocks();
    for (int it = 0; it < cfg_.scaling_iterations; ++it) {
      Vector col = P_.cwiseAbs();
      Vector row = Vector::Zero(m_);
      for (int i = 0; i < m_; ++i)
        for (SpMat::InnerIterator itr(C_, i); itr; ++itr) {
          const double a = std::abs(itr.value());
          row(i) = std::max(row(i), a);
          col(itr.col()) = std::max(col(itr.col()), a);
        }
      for (const auto& b : blocks) {
        double mx = 0.0;
        for (int k = 0; k < b.size(); ++k) mx = std::max(mx, col(b.offset + k));
        for (int k = 0; k < b.size(); ++k) col(b.offset + k) = mx;
      }
      Vector dt(n_), et(m_);
      for (int j = 0; j < n_; ++j)
        dt(j) = col(j) < kMin ? 1.0 : std::clamp(1.0 / std::sqrt(col(j)), kMin, kMax);
      for (int i = 0; i < m_; ++i)
        et(i) = row(i) < kMin ? 1.0 : std::clamp(1.0 / std::sqrt(row(i)), kMin, kMax);
      P_ = P_.cwiseProduct(dt).cwiseProduct(dt);
      q_ = q_.cwiseProduct(dt);
      C_ = et.asDiagonal() * C_ * dt.asDiagonal();
      D_ = D_.cwiseProduct(dt);
      E_ = E_.cwiseProduct(et);

      const double pnorm = n_ > 0 ? P_.cwiseAbs().mean() : 0.0;
      const double qnorm = n_ > 0 ? q_.cwiseAbs().maxCoeff() : 0.0;
      const double denom = std::max(pnorm, qnorm);
      const double ct = denom < kMin ? 1.0 : std::clamp(1.0 / denom, kMin, kMax);
      P_ *= ct;
      q_ *= ct;
      c_ *= ct;
    }
    D_ = D_.cwiseMin(kMax * kMax).cwiseMax(1.0 / (kMax * kMax));
  }

  Vector row_rho() const {
    Vector r(m_);
    for (int i = 0; i < m_; ++i) r(i) = is_eq_[static_cast<size_t>(i)] ? 1e3 * rho_ : rho_;
    return r;
  }

  void factor() {
    rho_c_ = row_rho();
    diag_ = P_.array() + cfg_.sigma + rho_;
    use_row_space_ = m_ > 0 && m_ <= n_;
    if (m_ == 0) return;
    if (use_row_space_) {
      const Vector dinv = diag_.cwiseInverse();
      SpMat cd = C_ * dinv.asDiagonal();
      Eigen::SparseMatrix<double> prod = (cd * C_.transpose()).pruned();
      Matrix s = Matrix(prod);
      s.diagonal() += rho_c_.cwiseInverse();
      llt_.compute(s);
    } else {
      Eigen::SparseMatrix<double> prod = C_.transpose() * rho_c_.asDiagonal() * C_;
      Matrix k = Matrix(prod);
      k.diagonal() += diag_;
      llt_.compute(k);
    }
    QNN_THROW_UNLESS(llt_.info() == Eigen::Success, ErrorCode::SolverFailed,
                     "KKT factorization failed");
  }

  Vector solve_linear(const Vector& rhs) const {
    if (m_ == 0) return rhs.cwiseQuotient(diag_);
    if (use_row_space_) {
      const Vector xd = rhs.cwiseQuotient(diag_);
      const Vector w = llt_.solve(C_ * xd);
      return (rhs - C_.transpose() * w).cwiseQuotient(diag_);
    }
    return llt_.solve(rhs);
  }

  void project_cone(Vector& v) {
    for (int j = 0; j < n_; ++j)
      if (cone_vars_nonneg_[static_cast<size_t>(j)]) v(j) = std::max(v(j), 0.0);
    for (const auto& b : problem_.blocks()) project_svec_block(v.data() + b.offset, b.dim, work_);
  }

  // Distance-style violation of membership in -K (polar cone) for a dual step.
  double polar_violation(const Vector& dy) {
    double viol = 0.0;
    for (int j = 0; j < n_; ++j) {
      const double d = D_(j);
      if (cone_vars_free_[static_cast<size_t>(j)]) viol = std::max(viol, std::abs(dy(j)) / d);
      if (cone_vars_nonneg_[static_cast<size_t>(j)]) viol = std::max(viol, dy(j) / d);
    }
    for (const auto& b : problem_.blocks()) {
      Vector neg = -dy.segment(b.offset, b.size()) / D_(b.offset);
      viol = std::max(viol, -svec_block_min_eig(neg.data(), b.dim, work_));
    }
    return viol;
  }

  double cone_violation(const Vector& dx) {
    double viol = 0.0;
    for (int j = 0; j < n_; ++j)
      if (cone_vars_nonneg_[static_cast<size_t>(j)]) viol = std::max(viol, -dx(j) * D_(j));
    for (const auto& b : problem_.blocks()) {
      Vector seg = dx.segment(b.offset, b.size()) * D_(b.offset);
      viol = std::max(viol, -svec_block_min_eig(seg.data(), b.dim, work_));
    }
    return viol;
  }

  bool primal_infeasible(const Vector& dyc, const Vector& dyk) {
    const double eps = cfg_.eps_infeasible;
    double norm = 0.0;
    if (m_ > 0) norm = E_.cwiseProduct(dyc).cwiseAbs().maxCoeff();
    if (n_ > 0) norm = std::max(norm, dyk.cwiseQuotient(D_).cwiseAbs().maxCoeff());
    if (norm <= 1e-30) return false;
    const Vector aty = C_.transpose() * dyc + dyk;
    if (aty.cwiseQuotient(D_).cwiseAbs().maxCoeff() > eps * norm) return false;
    double support = 0.0;
    for (int i = 0; i < m_; ++i) {
      const double y = dyc(i);
      if (y > 0) {
        if (!std::isfinite(u_(i))) {
          if (y * E_(i) > eps * norm) return false;
        } else {
          support += u_(i) * y;
        }
      } else if (y < 0) {
        if (!std::isfinite(l_(i))) {
          if (-y * E_(i) > eps * norm) return false;
        } else {
          support += l_(i) * y;
        }
      }
    }
    if (polar_violation(dyk) > eps * norm) return false;
    return support < -eps * norm;
  }

  bool dual_infeasible(const Vector& dx) {
    const double eps = cfg_.eps_infeasible;
    const double norm = n_ > 0 ? D_.cwiseProduct(dx).cwiseAbs().maxCoeff() : 0.0;
    if (norm <= 1e-30) return false;
    if (P_.cwiseProduct(dx).cwiseQuotient(D_).cwiseAbs().maxCoeff() / c_ > eps * norm) return false;
    if (q_.dot(dx) / c_ >= -eps * norm) return false;
    const Vector cdx = C_ * dx;
    for (int i = 0; i < m_; ++i) {
      const double v = cdx(i) / E_(i);
      const bool lf = std::isfinite(l_(i)), uf = std::isfinite(u_(i));
      if (lf && uf && std::abs(v) > eps * norm) return false;
      if (uf && !lf && v > eps * norm) return false;
      if (lf && !uf && v < -eps * norm) return false;
    }
    return cone_violation(dx) <= eps * norm;
  }

  ConicSolution iterate() {
    Vector x = Vector::Zero(n_);
    Vector zc = Vector::Zero(m_), yc = Vector::Zero(m_);
    Vector zk = Vector::Zero(n_), yk = Vector::Zero(n_);
    for (int i = 0; i < m_; ++i) zc(i) = std::clamp(0.0, l_(i), u_(i));

    Vector xt(n_), zct(m_), vk(n_), vc(m_);
    Vector x_prev, yc_prev, yk_prev;
    const double alpha = cfg_.alpha;

    ConicSolution sol;
    sol.status = Status::MaxIterations;
    int k = 0;
    for (k = 1; k <= cfg_.max_iterations; ++k) {
      const bool check = (k % cfg_.check_interval == 0) || k == cfg_.max_iterations;
      if (check) {
        x_prev = x;
        yc_prev = yc;
        yk_prev = yk;
      }
      Vector rhs = cfg_.sigma * x - q_ + (rho_ * zk - yk);
      if (m_ > 0) rhs += C_.transpose() * (rho_c_.cwiseProduct(zc) - yc);
      xt = solve_linear(rhs);
      if (m_ > 0) zct = C_ * xt;

      x = alpha * xt + (1.0 - alpha) * x;

      if (m_ > 0) {
        const Vector relaxed = alpha * zct + (1.0 - alpha) * zc;
        vc = relaxed + yc.cwiseQuotient(rho_c_);
        for (int i = 0; i < m_; ++i) vc(i) = std::clamp(vc(i), l_(i), u_(i));
        yc += rho_c_.cwiseProduct(relaxed - vc);
        zc = vc;
      }
      {
        const Vector relaxed = alpha * xt + (1.0 - alpha) * zk;
        vk = relaxed + yk / rho_;
        project_cone(vk);
        yk += rho_ * (relaxed - vk);
        zk = vk;
      }

      if (!check) continue;

      // Residuals in unscaled units.
      const Vector cx = m_ > 0 ? Vector(C_ * x) : Vector();
      double rp = 0.0, rd = 0.0;
      double pscale = 0.0, dscale = 0.0;
      if (m_ > 0) {
        rp = (cx - zc).cwiseQuotient(E_).cwiseAbs().maxCoeff();
        pscale = std::max(cx.cwiseQuotient(E_).cwiseAbs().maxCoeff(),
                          zc.cwiseQuotient(E_).cwiseAbs().maxCoeff());
      }
      if (n_ > 0) {
        rp = std::max(rp, (x - zk).cwiseProduct(D_).cwiseAbs().maxCoeff());
        pscale = std::max({pscale, x.cwiseProduct(D_).cwiseAbs().maxCoeff(),
                           zk.cwiseProduct(D_).cwiseAbs().maxCoeff()});
        const Vector px = P_.cwiseProduct(x);
        const Vector aty = (m_ > 0 ? Vector(C_.transpose() * yc) : Vector::Zero(n_)) + yk;
        rd = (px + q_ + aty).cwiseQuotient(D_).cwiseAbs().maxCoeff() / c_ / cost_scale_;
        dscale = std::max({px.cwiseQuotient(D_).cwiseAbs().maxCoeff(),
                           aty.cwiseQuotient(D_).cwiseAbs().maxCoeff(),
                           q_.cwiseQuotient(D_).cwiseAbs().maxCoeff()}) / c_ / cost_scale_;
      }
      sol.primal_residual = rp;
      sol.dual_residual = rd;

      if (cfg_.progress && cfg_.progress_interval > 0 && k % cfg_.progress_interval == 0)
        cfg_.progress(IterationInfo{k, rp, rd, rho_});

      if (rp <= cfg_.eps_abs + cfg_.eps_rel * pscale && rd <= cfg_.eps_abs + cfg_.eps_rel * dscale) {
        sol.status = Status::Optimal;
        break;
      }
      if (primal_infeasible(yc - yc_prev, yk - yk_prev)) {
        sol.status = Status::Infeasible;
        break;
      }
      if (dual_infeasible(x - x_prev)) {
        sol.status = Status::Unbounded;
        break;
      }

      if (cfg_.adaptive_rho && k % cfg_.adaptive_rho_interval == 0) {
        // Scaled-space residual balance.
        double sp = 0.0, sp_den = 1e-30, sd_den = 1e-30;
        if (m_ > 0) {
          sp = (C_ * x - zc).cwiseAbs().maxCoeff();
          sp_den = std::max({sp_den, zct.cwiseAbs().maxCoeff(), zc.cwiseAbs().maxCoeff()});
        }
        sp = std::max(sp, (x - zk).cwiseAbs().maxCoeff());
        sp_den = std::max({sp_den, x.cwiseAbs().maxCoeff(), zk.cwiseAbs().maxCoeff()});
        const Vector aty = (m_ > 0 ? Vector(C_.transpose() * yc) : Vector::Zero(n_)) + yk;
        const Vector px = P_.cwiseProduct(x);
        const double sd = (px + q_ + aty).cwiseAbs().maxCoeff();
        sd_den = std::max({sd_den, px.cwiseAbs().maxCoeff(), aty.cwiseAbs().maxCoeff(),
                           q_.cwiseAbs().maxCoeff()});
        const double ratio = (sp / sp_den) / std::max(sd / sd_den, 1e-30);
        double new_rho = std::clamp(rho_ * std::sqrt(ratio), 1e-6, 1e6);
        if (new_rho > cfg_.adaptive_rho_tolerance * rho_ || new_rho * cfg_.adaptive_rho_tolerance < rho_) {
          rho_ = new_rho;
          factor();
        }
      }
    }
    sol.iterations = std::min(k, cfg_.max_iterations);

    // Cone variables come from the projected copy so they are exactly feasible.
    sol.values.resize(static_cast<size_t>(n_));
    for (int j = 0; j < n_; ++j) {
      const double scaled = cone_vars_free_[static_cast<size_t>(j)] ? x(j) : zk(j);
      sol.values[static_cast<size_t>(j)] = scaled * D_(j) * svec_[static_cast<size_t>(j)];
    }
    sol.row_duals.resize(static_cast<size_t>(m_));
    for (int i = 0; i < m_; ++i) sol.row_duals[static_cast<size_t>(i)] = yc(i) * E_(i) / c_;
    sol.objective_value = problem_.objective(sol.values);
    return sol;
  }

  const ConicProblem& problem_;
  SolverConfig cfg_;
  int n_ = 0, m_ = 0;
  std::vector<double> svec_;
  SpMat C_;
  Vector P_, q_, l_, u_;
  Vector D_, E_;
  double c_ = 1.0;
  double cost_scale_ = 1.0;
  double rho_ = 0.1;
  Vector rho_c_, diag_;
  bool use_row_space_ = true;
  Eigen::LLT<Matrix> llt_;
  std::vector<bool> is_eq_, cone_vars_free_, cone_vars_nonneg_;
  Matrix work_;
};

}  // namespace detail

/// Solves a structured conic program by operator splitting. Deterministic for
/// fixed problem and config.
inline ConicSolution solve(const ConicProblem& problem, const SolverConfig& config = {}) {
  QNN_THROW_UNLESS(config.max_iterations >= 1 && config.check_interval >= 1,
                   ErrorCode::InvalidArgument, "invalid solver iteration settings");
  detail::AdmmSolver solver(problem, config);
  return solver.run();
}

}  // namespace qnn::sdp
