#pragma once

#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/polynomial.hpp"
#include "qnn/sdp/problem.hpp"
#include "qnn/sdp/solver.hpp"

namespace qnn {

/// State region: all of R^n, or an axis-aligned box.
struct Region {
  bool global = true;
  Vector lo, hi;

  static Region everywhere() { return {}; }
  static Region box(Vector lo, Vector hi) {
    QNN_THROW_UNLESS(lo.size() == hi.size(), ErrorCode::DimensionMismatch, "box bounds differ in length");
    QNN_THROW_UNLESS((lo.array() < hi.array()).all(), ErrorCode::InvalidArgument, "box needs lo < hi");
    return Region{false, std::move(lo), std::move(hi)};
  }

  bool is_box() const { return !global; }

  /// "global", or "lo:hi" per dimension separated by commas. A single
  /// interval is repeated for every dimension.
  static Region parse(const std::string& text, int dims) {
    if (text.empty() || text == "global") return everywhere();
    std::vector<std::pair<double, double>> iv;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
      const auto colon = part.find(':');
      QNN_THROW_UNLESS(colon != std::string::npos, ErrorCode::InvalidArgument,
                       "region interval '" + part + "' is not lo:hi");
      try {
        iv.emplace_back(std::stod(part.substr(0, colon)), std::stod(part.substr(colon + 1)));
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "region interval '" + part + "' is not numeric");
      }
    }
    if (iv.size() == 1 && dims > 1) iv.assign(static_cast<size_t>(dims), iv[0]);
    QNN_THROW_UNLESS(static_cast<int>(iv.size()) == dims, ErrorCode::DimensionMismatch,
                     "region has " + std::to_string(iv.size()) + " intervals, expected " + std::to_string(dims));
    Vector lo(dims), hi(dims);
    for (int i = 0; i < dims; ++i) {
      lo(i) = iv[static_cast<size_t>(i)].first;
      hi(i) = iv[static_cast<size_t>(i)].second;
    }
    return box(lo, hi);
  }

  std::string to_string() const {
    if (global) return "global";
    std::string s;
    for (int i = 0; i < lo.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(lo(i)) + ":" + std::to_string(hi(i));
    }
    return s;
  }

  /// Tensor grid with `per_dim` points per coordinate.
  std::vector<Vector> grid(int per_dim) const {
    QNN_THROW_UNLESS(is_box(), ErrorCode::RegionUnsupported, "grid needs a bounded region");
    QNN_THROW_UNLESS(per_dim >= 2, ErrorCode::InvalidArgument, "grid needs at least 2 points per dimension");
    const auto d = lo.size();
    std::vector<Vector> pts;
    std::vector<int> idx(static_cast<size_t>(d), 0);
    while (true) {
      Vector x(d);
      for (Eigen::Index k = 0; k < d; ++k)
        x(k) = lo(k) + (hi(k) - lo(k)) * idx[static_cast<size_t>(k)] / (per_dim - 1);
      pts.push_back(x);
      Eigen::Index k = 0;
      while (k < d && ++idx[static_cast<size_t>(k)] == per_dim) idx[static_cast<size_t>(k++)] = 0;
      if (k == d) break;
    }
    return pts;
  }
};

/// Gram certificate handle: M(x) = (I_s (x) z(x))' Q (I_s (x) z(x)).
struct GramBlock {
  sdp::PsdBlock gram;
  std::vector<Monomial> basis;
  int s = 0;

  int index(int i, int a) const { return i * static_cast<int>(basis.size()) + a; }
};

inline int default_half_degree(int degree) { return (degree + 1) / 2; }

namespace detail {

inline GramBlock new_gram(sdp::ConicProblem& prob, int s, int nvars, int half_degree) {
  GramBlock g;
  g.basis = monomials_up_to(nvars, half_degree);
  g.s = s;
  g.gram = prob.add_psd_block(s * static_cast<int>(g.basis.size()));
  return g;
}

}  // namespace detail

/// Polynomial matrix represented by a fresh Gram block; SOS by construction.
inline std::pair<GramBlock, AffinePolyMatrix> add_sos_multiplier(sdp::ConicProblem& prob, int s, int nvars,
                                                                 int half_degree) {
  const GramBlock g = detail::new_gram(prob, s, nvars, half_degree);
  AffinePolyMatrix m(s, s, nvars);
  const int nz = static_cast<int>(g.basis.size());
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      for (int a = 0; a < nz; ++a)
        for (int b = 0; b < nz; ++b) {
          const Monomial mono = monomial_product(g.basis[static_cast<size_t>(a)], g.basis[static_cast<size_t>(b)]);
          m(i, j).add_term(mono, sdp::var_expr(g.gram.entry(g.index(i, a), g.index(j, b))));
        }
  return {g, m};
}

/// Constrains the symmetric matrix polynomial M (upper triangle read) to be
/// a sum of squares by coefficient matching against a Gram block.
inline GramBlock add_matrix_sos(sdp::ConicProblem& prob, const AffinePolyMatrix& m, int half_degree = -1) {
  QNN_THROW_UNLESS(m.rows() == m.cols(), ErrorCode::DimensionMismatch, "SOS matrix must be square");
  if (half_degree < 0) half_degree = default_half_degree(m.degree());
  const int s = m.rows();
  const GramBlock g = detail::new_gram(prob, s, m.nvars(), half_degree);
  const int nz = static_cast<int>(g.basis.size());
  for (int i = 0; i < s; ++i)
    for (int j = i; j < s; ++j) {
      std::map<Monomial, sdp::LinearExpr> rows;
      for (int a = 0; a < nz; ++a)
        for (int b = 0; b < nz; ++b) {
          const Monomial mono = monomial_product(g.basis[static_cast<size_t>(a)], g.basis[static_cast<size_t>(b)]);
          rows[mono].add(g.gram.entry(g.index(i, a), g.index(j, b)), 1.0);
        }
      for (const auto& [mono, c] : m(i, j).terms()) rows[mono] -= c;
      for (auto& [mono, e] : rows) {
        e.compress();
        if (e.terms().empty() && e.constant() == 0.0) continue;
        prob.add_equality(std::move(e), 0.0);
      }
    }
  return g;
}

/// SOS certificate of M(x) >= 0 on a region. On a box, each coordinate
/// constraint g_k = (x_k - lo_k)(hi_k - x_k) >= 0 gets an SOS multiplier.
inline GramBlock add_matrix_sos_on_region(sdp::ConicProblem& prob, const AffinePolyMatrix& m, const Region& region,
                                          int half_degree = -1) {
  if (half_degree < 0) half_degree = default_half_degree(m.degree());
  if (region.global || half_degree == 0) return add_matrix_sos(prob, m, half_degree);
  QNN_THROW_UNLESS(region.lo.size() == m.nvars(), ErrorCode::DimensionMismatch,
                   "region dimension does not match the polynomial variables");
  AffinePolyMatrix rest = m;
  const int nv = m.nvars();
  for (int k = 0; k < nv; ++k) {
    auto [g, mult] = add_sos_multiplier(prob, m.rows(), nv, half_degree - 1);
    const Polynomial xk = Polynomial::variable(nv, k);
    const Polynomial gk = (xk - Polynomial::constant(nv, region.lo(k))) *
                          (Polynomial::constant(nv, region.hi(k)) - xk);
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) rest(i, j) -= gk * mult(i, j);
  }
  return add_matrix_sos(prob, rest, half_degree);
}

struct SosMargin {
  double margin = 0.0;  // largest t with M - t I certified, capped at 1
  sdp::Status status = sdp::Status::MaxIterations;
};

/// Largest t <= 1 such that M(x) - t I is certified nonnegative on the region.
inline SosMargin sos_margin(const PolyMatrix& m, const Region& region, int half_degree = -1,
                            const sdp::SolverConfig& cfg = {}) {
  sdp::ConicProblem prob;
  const int t = prob.add_variable();
  AffinePolyMatrix shifted = to_affine(m);
  const Monomial one(static_cast<size_t>(m.nvars()), 0);
  for (int i = 0; i < m.rows(); ++i) shifted(i, i).add_term(one, sdp::var_expr(t, -1.0));
  add_matrix_sos_on_region(prob, shifted, region, half_degree);
  prob.add_inequality(sdp::var_expr(t), 1.0);
  prob.add_cost(sdp::var_expr(t), -1.0);
  const auto sol = sdp::solve(prob, cfg);
  SosMargin out;
  out.status = sol.status;
  if (sol.status == sdp::Status::Optimal || sol.status == sdp::Status::MaxIterations) out.margin = sol.value(t);
  return out;
}

}  // namespace qnn
