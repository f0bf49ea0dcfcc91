#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "qnn/error.hpp"
#include "qnn/linalg.hpp"

namespace qnn::sdp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarKind { Free, NonNegative, PsdEntry };

/// Handle to a symmetric matrix variable constrained to the PSD cone. The
/// variable owns one scalar per upper-triangular entry.
struct PsdBlock {
  int id = -1;
  int dim = 0;
  int offset = 0;

  int entry(int i, int j) const { return offset + linalg::packed_index(i, j); }
  int size() const { return linalg::packed_size(dim); }
};

/// Sparse affine expression sum_k coef_k * x[var_k] + constant.
class LinearExpr {
 public:
  LinearExpr() = default;
  explicit LinearExpr(double constant) : constant_(constant) {}

  LinearExpr& add(int var, double coef) {
    if (coef != 0.0) terms_.emplace_back(var, coef);
    return *this;
  }
  LinearExpr& add_constant(double c) {
    constant_ += c;
    return *this;
  }
  LinearExpr& operator+=(const LinearExpr& other) {
    terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
    constant_ += other.constant_;
    return *this;
  }
  LinearExpr& operator-=(const LinearExpr& other) {
    for (const auto& [v, c] : other.terms_) terms_.emplace_back(v, -c);
    constant_ -= other.constant_;
    return *this;
  }
  LinearExpr& operator*=(double s) {
    for (auto& t : terms_) t.second *= s;
    constant_ *= s;
    return *this;
  }
  friend LinearExpr operator+(LinearExpr a, const LinearExpr& b) { return a += b; }
  friend LinearExpr operator-(LinearExpr a, const LinearExpr& b) { return a -= b; }
  friend LinearExpr operator*(double s, LinearExpr a) { return a *= s; }

  /// Merges duplicate variables and drops exact zeros.
  void compress() {
    std::sort(terms_.begin(), terms_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<int, double>> merged;
    merged.reserve(terms_.size());
    for (const auto& t : terms_) {
      if (!merged.empty() && merged.back().first == t.first)
        merged.back().second += t.second;
      else
        merged.push_back(t);
    }
    std::erase_if(merged, [](const auto& t) { return t.second == 0.0; });
    terms_ = std::move(merged);
  }

  bool is_constant() const { return terms_.empty(); }
  const std::vector<std::pair<int, double>>& terms() const { return terms_; }
  double constant() const { return constant_; }

  double evaluate(const std::vector<double>& x) const {
    double s = constant_;
    for (const auto& [v, c] : terms_) s += c * x[static_cast<size_t>(v)];
    return s;
  }

 private:
  std::vector<std::pair<int, double>> terms_;
  double constant_ = 0.0;
};

inline LinearExpr var_expr(int var, double coef = 1.0) {
  LinearExpr e;
  e.add(var, coef);
  return e;
}

/// <M, X> for a symmetric coefficient matrix M and PSD variable X.
inline LinearExpr inner_product(const PsdBlock& block, const Matrix& m) {
  QNN_THROW_UNLESS(m.rows() == block.dim && m.cols() == block.dim,
                   ErrorCode::DimensionMismatch, "inner product dimension mismatch");
  LinearExpr e;
  for (int j = 0; j < block.dim; ++j) {
    e.add(block.entry(j, j), m(j, j));
    for (int i = 0; i < j; ++i) e.add(block.entry(i, j), m(i, j) + m(j, i));
  }
  return e;
}

inline LinearExpr trace_of(const PsdBlock& block, int first = 0, int count = -1) {
  if (count < 0) count = block.dim - first;
  LinearExpr e;
  for (int i = first; i < first + count; ++i) e.add(block.entry(i, i), 1.0);
  return e;
}

/// A single linear row lower <= sum coef * x <= upper.
struct LinearRow {
  std::vector<std::pair<int, double>> terms;
  double lower = -kInf;
  double upper = kInf;
  bool is_equality() const { return lower == upper; }
};

/// Structured conic program:
///
///   minimize   1/2 sum_j w_j x_j^2 + q^T x + constant
///   subject to lower_i <= row_i(x) <= upper_i
///              x restricted per variable to R, R_+ or a PSD block.
///
/// Max-of-affine terms enter through add_epigraph, which bounds each term by
/// a scalar variable.
class ConicProblem {
 public:
  int add_variable(VarKind kind = VarKind::Free) {
    QNN_THROW_UNLESS(kind != VarKind::PsdEntry, ErrorCode::InvalidArgument,
                     "use add_psd_block for matrix variables");
    kinds_.push_back(kind);
    block_of_.push_back(-1);
    linear_cost_.push_back(0.0);
    quad_cost_.push_back(0.0);
    return static_cast<int>(kinds_.size()) - 1;
  }

  PsdBlock add_psd_block(int dim) {
    QNN_THROW_UNLESS(dim >= 1, ErrorCode::InvalidArgument, "PSD block dimension must be >= 1");
    PsdBlock b{static_cast<int>(blocks_.size()), dim, num_variables()};
    for (int k = 0; k < b.size(); ++k) {
      kinds_.push_back(VarKind::PsdEntry);
      block_of_.push_back(b.id);
      linear_cost_.push_back(0.0);
      quad_cost_.push_back(0.0);
    }
    blocks_.push_back(b);
    return b;
  }

  void add_equality(LinearExpr expr, double rhs) {
    const double b = rhs - expr.constant();
    add_row(std::move(expr), b, b);
  }

  /// expr <= upper
  void add_inequality(LinearExpr expr, double upper) {
    const double u = upper - expr.constant();
    add_row(std::move(expr), -kInf, u);
  }

  /// expr >= lower
  void add_lower_bound(LinearExpr expr, double lower) {
    const double l = lower - expr.constant();
    add_row(std::move(expr), l, kInf);
  }

  /// Imposes t >= term for every term, so t bounds their maximum.
  void add_epigraph(int t, const std::vector<LinearExpr>& terms) {
    check_var(t);
    for (const auto& term : terms) {
      LinearExpr row = term;
      row.add(t, -1.0);
      add_inequality(std::move(row), 0.0);
    }
    epigraph_vars_.push_back(t);
  }

  /// Adds (coef * expr) to the linear objective; the constant goes to offset.
  void add_cost(const LinearExpr& expr, double coef = 1.0) {
    for (const auto& [v, c] : expr.terms()) {
      check_var(v);
      linear_cost_[static_cast<size_t>(v)] += coef * c;
    }
    constant_ += coef * expr.constant();
  }

  /// Adds (weight / 2) * x_var^2 to the objective; weight must be >= 0.
  void add_quadratic_cost(int var, double weight) {
    check_var(var);
    QNN_THROW_UNLESS(weight >= 0.0 && std::isfinite(weight), ErrorCode::InvalidArgument,
                     "quadratic weights must be finite and nonnegative");
    quad_cost_[static_cast<size_t>(var)] += weight;
  }

  void validate() const {
    QNN_THROW_UNLESS(kinds_.size() == linear_cost_.size() && kinds_.size() == quad_cost_.size(),
                     ErrorCode::InvalidArgument, "variable tables out of sync");
    for (double w : quad_cost_)
      QNN_THROW_UNLESS(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidArgument,
                       "quadratic objective must be PSD");
    for (double q : linear_cost_)
      QNN_THROW_UNLESS(std::isfinite(q), ErrorCode::InvalidArgument, "non-finite cost");
    for (const auto& r : rows_) {
      QNN_THROW_UNLESS(r.lower <= r.upper, ErrorCode::InvalidArgument, "row with lower > upper");
      for (const auto& [v, c] : r.terms) {
        check_var(v);
        QNN_THROW_UNLESS(std::isfinite(c), ErrorCode::InvalidArgument, "non-finite coefficient");
      }
    }
  }

  int num_variables() const { return static_cast<int>(kinds_.size()); }
  int num_rows() const { return static_cast<int>(rows_.size()); }
  int num_equalities() const {
    return static_cast<int>(std::count_if(rows_.begin(), rows_.end(),
                                          [](const LinearRow& r) { return r.is_equality(); }));
  }
  const std::vector<VarKind>& kinds() const { return kinds_; }
  const std::vector<int>& block_of() const { return block_of_; }
  const std::vector<PsdBlock>& blocks() const { return blocks_; }
  const std::vector<LinearRow>& rows() const { return rows_; }
  const std::vector<double>& linear_cost() const { return linear_cost_; }
  const std::vector<double>& quadratic_cost() const { return quad_cost_; }
  const std::vector<int>& epigraph_variables() const { return epigraph_vars_; }
  double objective_constant() const { return constant_; }

  double objective(const std::vector<double>& x) const {
    double f = constant_;
    for (size_t j = 0; j < x.size(); ++j)
      f += 0.5 * quad_cost_[j] * x[j] * x[j] + linear_cost_[j] * x[j];
    return f;
  }

 private:
  void check_var(int v) const {
    QNN_THROW_UNLESS(v >= 0 && v < num_variables(), ErrorCode::InvalidArgument,
                     "reference to undeclared variable " + std::to_string(v));
  }

  void add_row(LinearExpr expr, double lower, double upper) {
    expr.compress();
    for (const auto& [v, c] : expr.terms()) check_var(v);
    rows_.push_back(LinearRow{expr.terms(), lower, upper});
  }

  std::vector<VarKind> kinds_;
  std::vector<int> block_of_;
  std::vector<PsdBlock> blocks_;
  std::vector<LinearRow> rows_;
  std::vector<double> linear_cost_;
  std::vector<double> quad_cost_;
  std::vector<int> epigraph_vars_;
  double constant_ = 0.0;
};

}  // namespace qnn::sdp
