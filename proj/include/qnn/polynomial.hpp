#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"
#include "qnn/sdp/problem.hpp"

namespace qnn {

/// Exponent vector, one entry per state variable.
using Monomial = std::vector<int>;

inline int total_degree(const Monomial& m) { return std::accumulate(m.begin(), m.end(), 0); }

inline Monomial monomial_product(const Monomial& a, const Monomial& b) {
  Monomial out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline double monomial_value(const Monomial& m, const Vector& x) {
  double v = 1.0;
  for (size_t i = 0; i < m.size(); ++i)
    for (int k = 0; k < m[i]; ++k) v *= x(static_cast<Eigen::Index>(i));
  return v;
}

/// All monomials in nvars variables with total degree <= degree, graded.
inline std::vector<Monomial> monomials_up_to(int nvars, int degree) {
  std::vector<Monomial> out;
  for (int d = 0; d <= degree; ++d) {
    // Enumerate exponent vectors of total degree d in reverse lexicographic order.
    Monomial cur(static_cast<size_t>(nvars), 0);
    std::function<void(int, int)> rec = [&](int idx, int left) {
      if (idx == nvars - 1) {
        cur[static_cast<size_t>(idx)] = left;
        out.push_back(cur);
        return;
      }
      for (int e = left; e >= 0; --e) {
        cur[static_cast<size_t>(idx)] = e;
        rec(idx + 1, left - e);
      }
    };
    if (nvars == 0) {
      if (d == 0) out.push_back(cur);
    } else {
      rec(0, d);
    }
  }
  return out;
}

inline std::string monomial_string(const Monomial& m, const std::vector<std::string>& names = {}) {
  std::string s;
  for (size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0) continue;
    if (!s.empty()) s += "*";
    s += i < names.size() ? names[i] : "x" + std::to_string(i + 1);
    if (m[i] > 1) s += "^" + std::to_string(m[i]);
  }
  return s.empty() ? "1" : s;
}

namespace detail {
inline bool coef_is_zero(double c) { return c == 0.0; }
inline bool coef_is_zero(const sdp::LinearExpr& e) { return e.terms().empty() && e.constant() == 0.0; }
inline sdp::LinearExpr coef_mul(const sdp::LinearExpr& e, double s) { return s * e; }
inline sdp::LinearExpr coef_mul(double s, const sdp::LinearExpr& e) { return s * e; }
inline double coef_mul(double a, double b) { return a * b; }
inline void coef_normalize(double&) {}
inline void coef_normalize(sdp::LinearExpr& e) { e.compress(); }
}  // namespace detail

/// Multivariate polynomial with coefficients in C (double, or an affine
/// expression in decision variables).
template <class C>
class Poly {
 public:
  Poly() = default;
  explicit Poly(int nvars) : nvars_(nvars) {}

  static Poly constant(int nvars, C c) {
    Poly p(nvars);
    p.add_term(Monomial(static_cast<size_t>(nvars), 0), std::move(c));
    return p;
  }
  /// The single variable x_i.
  static Poly variable(int nvars, int i) {
    Poly p(nvars);
    Monomial m(static_cast<size_t>(nvars), 0);
    m[static_cast<size_t>(i)] = 1;
    p.add_term(m, C(1.0));
    return p;
  }

  int nvars() const { return nvars_; }
  const std::map<Monomial, C>& terms() const { return terms_; }

  void add_term(const Monomial& m, C c) {
    QNN_THROW_UNLESS(static_cast<int>(m.size()) == nvars_, ErrorCode::DimensionMismatch,
                     "monomial has wrong number of variables");
    auto it = terms_.find(m);
    if (it == terms_.end())
      terms_.emplace(m, std::move(c));
    else {
      it->second += c;
      detail::coef_normalize(it->second);
    }
  }

  C coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? C(0.0) : it->second;
  }

  int degree() const {
    int d = 0;
    for (const auto& [m, c] : terms_)
      if (!detail::coef_is_zero(c)) d = std::max(d, total_degree(m));
    return d;
  }

  bool is_zero() const {
    for (const auto& [m, c] : terms_)
      if (!detail::coef_is_zero(c)) return false;
    return true;
  }

  Poly& operator+=(const Poly& o) {
    adopt(o);
    for (const auto& [m, c] : o.terms_) add_term(m, c);
    return *this;
  }
  Poly& operator-=(const Poly& o) {
    adopt(o);
    for (const auto& [m, c] : o.terms_) add_term(m, detail::coef_mul(-1.0, c));
    return *this;
  }
  Poly& operator*=(double s) {
    for (auto& [m, c] : terms_) c = detail::coef_mul(s, c);
    return *this;
  }
  friend Poly operator+(Poly a, const Poly& b) { return a += b; }
  friend Poly operator-(Poly a, const Poly& b) { return a -= b; }
  friend Poly operator*(double s, Poly a) { return a *= s; }

  double evaluate(const Vector& x) const
    requires std::is_same_v<C, double>
  {
    double v = 0.0;
    for (const auto& [m, c] : terms_) v += c * monomial_value(m, x);
    return v;
  }

  /// Drops coefficients with magnitude <= tol.
  Poly pruned(double tol) const
    requires std::is_same_v<C, double>
  {
    Poly out(nvars_);
    for (const auto& [m, c] : terms_)
      if (std::abs(c) > tol) out.terms_.emplace(m, c);
    return out;
  }

  std::string to_string(const std::vector<std::string>& names = {}, int precision = 6) const
    requires std::is_same_v<C, double>
  {
    std::string s;
    char buf[64];
    for (const auto& [m, c] : terms_) {
      if (c == 0.0) continue;
      std::snprintf(buf, sizeof buf, "%+.*g", precision, c);
      if (!s.empty()) s += " ";
      s += buf;
      if (total_degree(m) > 0) s += "*" + monomial_string(m, names);
    }
    return s.empty() ? "0" : s;
  }

 private:
  void adopt(const Poly& o) {
    if (terms_.empty() && nvars_ == 0) nvars_ = o.nvars_;
    QNN_THROW_UNLESS(o.nvars_ == nvars_ || o.terms_.empty(), ErrorCode::DimensionMismatch,
                     "polynomials over different variable counts");
  }

  int nvars_ = 0;
  std::map<Monomial, C> terms_;
};

using Polynomial = Poly<double>;
using AffinePolynomial = Poly<sdp::LinearExpr>;

template <class A, class B>
auto operator*(const Poly<A>& a, const Poly<B>& b) {
  using R = decltype(detail::coef_mul(std::declval<A>(), std::declval<B>()));
  QNN_THROW_UNLESS(a.nvars() == b.nvars(), ErrorCode::DimensionMismatch, "polynomials over different variables");
  Poly<R> out(a.nvars());
  for (const auto& [ma, ca] : a.terms())
    for (const auto& [mb, cb] : b.terms()) out.add_term(monomial_product(ma, mb), detail::coef_mul(ca, cb));
  return out;
}

inline AffinePolynomial to_affine(const Polynomial& p) {
  AffinePolynomial out(p.nvars());
  for (const auto& [m, c] : p.terms()) out.add_term(m, sdp::LinearExpr(c));
  return out;
}

/// Substitutes decision-variable values.
inline Polynomial evaluate_coefficients(const AffinePolynomial& p, const std::vector<double>& values) {
  Polynomial out(p.nvars());
  for (const auto& [m, c] : p.terms()) out.add_term(m, c.evaluate(values));
  return out;
}

/// Dense matrix of polynomials, row-major storage.
template <class C>
class PolyMatrixT {
 public:
  PolyMatrixT() = default;
  PolyMatrixT(int rows, int cols, int nvars)
      : rows_(rows), cols_(cols), nvars_(nvars),
        entries_(static_cast<size_t>(rows * cols), Poly<C>(nvars)) {}

  static PolyMatrixT constant(const Matrix& m, int nvars)
    requires std::is_same_v<C, double>
  {
    PolyMatrixT out(static_cast<int>(m.rows()), static_cast<int>(m.cols()), nvars);
    for (int i = 0; i < out.rows_; ++i)
      for (int j = 0; j < out.cols_; ++j)
        if (m(i, j) != 0.0) out(i, j) = Polynomial::constant(nvars, m(i, j));
    return out;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nvars() const { return nvars_; }

  Poly<C>& operator()(int i, int j) { return entries_[index(i, j)]; }
  const Poly<C>& operator()(int i, int j) const { return entries_[index(i, j)]; }

  int degree() const {
    int d = 0;
    for (const auto& e : entries_) d = std::max(d, e.degree());
    return d;
  }

  PolyMatrixT transpose() const {
    PolyMatrixT out(cols_, rows_, nvars_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  PolyMatrixT block(int r0, int c0, int nr, int nc) const {
    PolyMatrixT out(nr, nc, nvars_);
    for (int i = 0; i < nr; ++i)
      for (int j = 0; j < nc; ++j) out(i, j) = (*this)(r0 + i, c0 + j);
    return out;
  }

  void set_block(int r0, int c0, const PolyMatrixT& b) {
    for (int i = 0; i < b.rows(); ++i)
      for (int j = 0; j < b.cols(); ++j) (*this)(r0 + i, c0 + j) = b(i, j);
  }

  PolyMatrixT& operator+=(const PolyMatrixT& o) {
    check_same(o);
    for (size_t k = 0; k < entries_.size(); ++k) entries_[k] += o.entries_[k];
    return *this;
  }
  PolyMatrixT& operator-=(const PolyMatrixT& o) {
    check_same(o);
    for (size_t k = 0; k < entries_.size(); ++k) entries_[k] -= o.entries_[k];
    return *this;
  }
  PolyMatrixT& operator*=(double s) {
    for (auto& e : entries_) e *= s;
    return *this;
  }
  friend PolyMatrixT operator+(PolyMatrixT a, const PolyMatrixT& b) { return a += b; }
  friend PolyMatrixT operator-(PolyMatrixT a, const PolyMatrixT& b) { return a -= b; }
  friend PolyMatrixT operator*(double s, PolyMatrixT a) { return a *= s; }

  Matrix evaluate(const Vector& x) const
    requires std::is_same_v<C, double>
  {
    QNN_THROW_UNLESS(x.size() == nvars_, ErrorCode::DimensionMismatch, "evaluation point has wrong dimension");
    Matrix m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j).evaluate(x);
    return m;
  }

  /// Coefficient matrix of one monomial.
  Matrix coefficient(const Monomial& mono) const
    requires std::is_same_v<C, double>
  {
    Matrix m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j).coefficient(mono);
    return m;
  }

  Matrix constant_part() const
    requires std::is_same_v<C, double>
  {
    return coefficient(Monomial(static_cast<size_t>(nvars_), 0));
  }

  /// Largest |coefficient| over all non-constant monomials.
  double nonconstant_magnitude() const
    requires std::is_same_v<C, double>
  {
    double mx = 0.0;
    for (const auto& e : entries_)
      for (const auto& [m, c] : e.terms())
        if (total_degree(m) > 0) mx = std::max(mx, std::abs(c));
    return mx;
  }

  PolyMatrixT pruned(double tol) const
    requires std::is_same_v<C, double>
  {
    PolyMatrixT out(rows_, cols_, nvars_);
    for (size_t k = 0; k < entries_.size(); ++k) out.entries_[k] = entries_[k].pruned(tol);
    return out;
  }

 private:
  size_t index(int i, int j) const {
    QNN_THROW_UNLESS(i >= 0 && i < rows_ && j >= 0 && j < cols_, ErrorCode::DimensionMismatch,
                     "polynomial matrix index out of range");
    return static_cast<size_t>(i * cols_ + j);
  }
  void check_same(const PolyMatrixT& o) const {
    QNN_THROW_UNLESS(o.rows_ == rows_ && o.cols_ == cols_ && o.nvars_ == nvars_, ErrorCode::DimensionMismatch,
                     "polynomial matrix shapes differ");
  }

  int rows_ = 0, cols_ = 0, nvars_ = 0;
  std::vector<Poly<C>> entries_;
};

using PolyMatrix = PolyMatrixT<double>;
using AffinePolyMatrix = PolyMatrixT<sdp::LinearExpr>;

template <class A, class B>
auto operator*(const PolyMatrixT<A>& a, const PolyMatrixT<B>& b) {
  using R = decltype(detail::coef_mul(std::declval<A>(), std::declval<B>()));
  QNN_THROW_UNLESS(a.cols() == b.rows() && a.nvars() == b.nvars(), ErrorCode::DimensionMismatch,
                   "polynomial matrix product shape mismatch");
  PolyMatrixT<R> out(a.rows(), b.cols(), a.nvars());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.cols(); ++j)
      for (int k = 0; k < a.cols(); ++k) {
        if (a(i, k).terms().empty() || b(k, j).terms().empty()) continue;
        out(i, j) += a(i, k) * b(k, j);
      }
  return out;
}

inline AffinePolyMatrix to_affine(const PolyMatrix& m) {
  AffinePolyMatrix out(m.rows(), m.cols(), m.nvars());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = to_affine(m(i, j));
  return out;
}

inline PolyMatrix evaluate_coefficients(const AffinePolyMatrix& m, const std::vector<double>& values) {
  PolyMatrix out(m.rows(), m.cols(), m.nvars());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = evaluate_coefficients(m(i, j), values);
  return out;
}

/// Matrix whose entries are scalar decision expressions (constant in x).
inline AffinePolyMatrix affine_constant(const std::vector<std::vector<sdp::LinearExpr>>& e, int nvars) {
  const int r = static_cast<int>(e.size());
  const int c = r > 0 ? static_cast<int>(e[0].size()) : 0;
  AffinePolyMatrix out(r, c, nvars);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out(i, j) = AffinePolynomial::constant(nvars, e[static_cast<size_t>(i)][static_cast<size_t>(j)]);
  return out;
}

}  // namespace qnn
