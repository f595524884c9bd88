#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "covsteer/matrix_utils.hpp"

namespace covsteer {

/// Sparse linear expression over the packed variable vector plus a constant.
/// Packed layout: symmetric blocks enter as svec (off-diagonals scaled by
/// sqrt(2)), scalars as themselves.
struct LinExpr {
  double constant = 0.0;
  std::vector<std::pair<int, double>> terms;  // (packed index, coefficient)

  LinExpr() = default;
  explicit LinExpr(double c) : constant(c) {}

  LinExpr& operator+=(const LinExpr& other) {
    constant += other.constant;
    terms.insert(terms.end(), other.terms.begin(), other.terms.end());
    return *this;
  }
  LinExpr& operator-=(const LinExpr& other) {
    constant -= other.constant;
    for (const auto& [idx, coef] : other.terms) terms.emplace_back(idx, -coef);
    return *this;
  }
  LinExpr& operator*=(double a) {
    constant *= a;
    for (auto& [idx, coef] : terms) coef *= a;
    return *this;
  }
  friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
  friend LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
  friend LinExpr operator*(double a, LinExpr e) { return e *= a; }

  /// Merges duplicate indices and drops negligible coefficients.
  void compress(double drop_tol = 0.0) {
    std::sort(terms.begin(), terms.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<int, double>> merged;
    merged.reserve(terms.size());
    for (const auto& [idx, coef] : terms) {
      if (!merged.empty() && merged.back().first == idx) {
        merged.back().second += coef;
      } else {
        merged.emplace_back(idx, coef);
      }
    }
    terms.clear();
    for (const auto& [idx, coef] : merged) {
      if (std::abs(coef) > drop_tol) terms.emplace_back(idx, coef);
    }
  }
};

/// Dense grid of linear expressions; the unit the PSD memberships and matrix
/// equalities are written in.
struct MatrixExpr {
  int rows = 0, cols = 0;
  std::vector<LinExpr> entries;  // row-major

  MatrixExpr() = default;
  MatrixExpr(int r, int c) : rows(r), cols(c), entries(r * c) {}

  LinExpr& operator()(int i, int j) { return entries[i * cols + j]; }
  const LinExpr& operator()(int i, int j) const { return entries[i * cols + j]; }

  static MatrixExpr constant(const Matrix& M) {
    MatrixExpr e(static_cast<int>(M.rows()), static_cast<int>(M.cols()));
    for (int i = 0; i < e.rows; ++i)
      for (int j = 0; j < e.cols; ++j) e(i, j) = LinExpr(M(i, j));
    return e;
  }

  MatrixExpr transpose() const {
    MatrixExpr t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  MatrixExpr& operator+=(const MatrixExpr& other) {
    if (rows != other.rows || cols != other.cols) {
      throw DimensionMismatch("MatrixExpr +=");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] += other.entries[i];
    return *this;
  }
  MatrixExpr& operator-=(const MatrixExpr& other) {
    if (rows != other.rows || cols != other.cols) {
      throw DimensionMismatch("MatrixExpr -=");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] -= other.entries[i];
    return *this;
  }
  friend MatrixExpr operator+(MatrixExpr a, const MatrixExpr& b) { return a += b; }
  friend MatrixExpr operator-(MatrixExpr a, const MatrixExpr& b) { return a -= b; }

  /// L * this for a constant L.
  friend MatrixExpr operator*(const Matrix& L, const MatrixExpr& e) {
    if (static_cast<int>(L.cols()) != e.rows) throw DimensionMismatch("L * expr");
    MatrixExpr out(static_cast<int>(L.rows()), e.cols);
    for (int i = 0; i < out.rows; ++i) {
      for (int j = 0; j < out.cols; ++j) {
        LinExpr acc;
        for (int p = 0; p < e.rows; ++p) {
          if (L(i, p) == 0.0) continue;
          acc += L(i, p) * e(p, j);
        }
        acc.compress();
        out(i, j) = std::move(acc);
      }
    }
    return out;
  }
  /// this * Rc for a constant Rc.
  friend MatrixExpr operator*(const MatrixExpr& e, const Matrix& Rc) {
    if (e.cols != static_cast<int>(Rc.rows())) throw DimensionMismatch("expr * R");
    MatrixExpr out(e.rows, static_cast<int>(Rc.cols()));
    for (int i = 0; i < out.rows; ++i) {
      for (int j = 0; j < out.cols; ++j) {
        LinExpr acc;
        for (int p = 0; p < e.cols; ++p) {
          if (Rc(p, j) == 0.0) continue;
          acc += Rc(p, j) * e(i, p);
        }
        acc.compress();
        out(i, j) = std::move(acc);
      }
    }
    return out;
  }
};

enum class BlockKind { Symmetric, Scalar };

struct BlockInfo {
  std::string name;
  BlockKind kind = BlockKind::Scalar;
  int size = 1;    // matrix order for Symmetric, 1 for Scalar
  int offset = 0;  // start in the packed vector
  int dim = 1;     // packed scalars: size*(size+1)/2 or 1
};

struct SocMembership {
  LinExpr t;
  std::vector<LinExpr> v;  // t >= ||v||_2
};

/// Per-stage bookkeeping that lets a solution be read back out of the packed
/// vector: block ids for Sigma_0..Sigma_N and Y_0..Y_{N-1}, scalar ids for the
/// U_k entries (row-major m x n) and the epigraph values when present.
struct StageLayout {
  int n = 0, m = 0, N = 0;
  std::vector<int> sigma;
  std::vector<std::vector<int>> u;
  std::vector<int> y;
  std::vector<int> t;
};

/// Solver-agnostic standard form: named variable blocks, a linear objective,
/// affine equalities, and PSD / second-order-cone memberships.
class ConicProgram {
 public:
  int add_symmetric(std::string name, int size) {
    if (size < 1) throw Error("add_symmetric: size must be >= 1");
    BlockInfo info;
    info.name = std::move(name);
    info.kind = BlockKind::Symmetric;
    info.size = size;
    info.offset = packed_size_;
    info.dim = svec_dim(size);
    packed_size_ += info.dim;
    blocks_.push_back(std::move(info));
    objective_.resize(packed_size_, 0.0);
    return static_cast<int>(blocks_.size()) - 1;
  }

  int add_scalar(std::string name) {
    BlockInfo info;
    info.name = std::move(name);
    info.kind = BlockKind::Scalar;
    info.size = 1;
    info.offset = packed_size_;
    info.dim = 1;
    packed_size_ += 1;
    blocks_.push_back(std::move(info));
    objective_.resize(packed_size_, 0.0);
    return static_cast<int>(blocks_.size()) - 1;
  }

  int packed_size() const { return packed_size_; }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  const BlockInfo& block(int id) const { return blocks_.at(id); }

  /// Expression for entry (i,j) of a symmetric block. Off-diagonal packed
  /// variables carry the svec sqrt(2) factor, so the coefficient here is
  /// 1/sqrt(2).
  LinExpr entry(int block_id, int i, int j) const {
    const BlockInfo& b = block(block_id);
    if (b.kind != BlockKind::Symmetric) {
      throw Error("entry(): block '" + b.name + "' is not symmetric");
    }
    if (i < 0 || j < 0 || i >= b.size || j >= b.size) {
      throw DimensionMismatch("entry(): index out of range");
    }
    const int lo = std::min(i, j), hi = std::max(i, j);
    LinExpr e;
    e.terms.emplace_back(b.offset + svec_index(b.size, hi, lo),
                         i == j ? 1.0 : 1.0 / kSqrt2);
    return e;
  }

  LinExpr scalar(int block_id) const {
    const BlockInfo& b = block(block_id);
    if (b.kind != BlockKind::Scalar) {
      throw Error("scalar(): block '" + b.name + "' is not scalar");
    }
    LinExpr e;
    e.terms.emplace_back(b.offset, 1.0);
    return e;
  }

  /// Full s x s expression grid for a symmetric block.
  MatrixExpr block_expr(int block_id) const {
    const BlockInfo& b = block(block_id);
    MatrixExpr e(b.size, b.size);
    for (int i = 0; i < b.size; ++i)
      for (int j = 0; j < b.size; ++j) e(i, j) = entry(block_id, i, j);
    return e;
  }

  /// m x n grid over scalar blocks listed row-major.
  MatrixExpr scalar_grid_expr(const std::vector<int>& ids, int m, int n) const {
    if (static_cast<int>(ids.size()) != m * n) {
      throw DimensionMismatch("scalar_grid_expr: id count");
    }
    MatrixExpr e(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) e(i, j) = scalar(ids[i * n + j]);
    return e;
  }

  /// Adds lhs == rhs as one scalar constraint.
  void add_equality(LinExpr lhs, double rhs = 0.0) {
    lhs.constant -= rhs;
    lhs.compress();
    equalities_.push_back(std::move(lhs));
  }

  /// Adds expr == target entrywise over the lower triangle (both sides
  /// symmetric) or over all entries for general shapes.
  void add_matrix_equality(const MatrixExpr& expr, const Matrix& target,
                           bool symmetric) {
    if (expr.rows != target.rows() || expr.cols != target.cols()) {
      throw DimensionMismatch("add_matrix_equality");
    }
    for (int i = 0; i < expr.rows; ++i) {
      for (int j = 0; j <= (symmetric ? i : expr.cols - 1); ++j) {
        LinExpr e = expr(i, j);
        add_equality(std::move(e), target(i, j));
      }
    }
  }

  /// Requires the (square, symmetric) expression to be PSD. Asymmetric input
  /// is averaged with its transpose; only the lower triangle is kept.
  void add_psd(const MatrixExpr& F) {
    if (F.rows != F.cols) throw DimensionMismatch("add_psd: not square");
    MatrixExpr sym(F.rows, F.cols);
    for (int i = 0; i < F.rows; ++i) {
      for (int j = 0; j < F.cols; ++j) {
        sym(i, j) = 0.5 * (F(i, j) + F(j, i));
        sym(i, j).compress();
      }
    }
    psd_memberships_.push_back(std::move(sym));
  }

  void add_soc(LinExpr t, std::vector<LinExpr> v) {
    t.compress();
    for (auto& e : v) e.compress();
    soc_memberships_.push_back({std::move(t), std::move(v)});
  }

  /// Accumulates a linear term into the objective (constants fold into the
  /// reported objective offset).
  void add_objective_term(const LinExpr& e) {
    objective_offset_ += e.constant;
    for (const auto& [idx, coef] : e.terms) objective_[idx] += coef;
  }

  const std::vector<double>& objective() const { return objective_; }
  double objective_offset() const { return objective_offset_; }
  const std::vector<LinExpr>& equalities() const { return equalities_; }
  const std::vector<MatrixExpr>& psd_memberships() const {
    return psd_memberships_;
  }
  const std::vector<SocMembership>& soc_memberships() const {
    return soc_memberships_;
  }

  /// Reads a symmetric block's value out of a packed vector.
  Matrix block_value(const Vector& x, int block_id) const {
    const BlockInfo& b = block(block_id);
    if (b.kind != BlockKind::Symmetric) {
      throw Error("block_value(): block '" + b.name + "' is not symmetric");
    }
    return smat(x.segment(b.offset, b.dim));
  }

  double scalar_value(const Vector& x, int block_id) const {
    const BlockInfo& b = block(block_id);
    if (b.kind != BlockKind::Scalar) {
      throw Error("scalar_value(): block '" + b.name + "' is not scalar");
    }
    return x(b.offset);
  }

  std::optional<StageLayout> layout;

 private:
  int packed_size_ = 0;
  std::vector<BlockInfo> blocks_;
  std::vector<double> objective_;
  double objective_offset_ = 0.0;
  std::vector<LinExpr> equalities_;
  std::vector<MatrixExpr> psd_memberships_;
  std::vector<SocMembership> soc_memberships_;
};

}  // namespace covsteer
