#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace covsteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kSqrt2 = 1.4142135623730951;

/// Base class for all exceptions thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& what)
      : Error("dimension mismatch: " + what) {}
};

struct NonFiniteInput : Error {
  explicit NonFiniteInput(const std::string& what)
      : Error("non-finite input: " + what) {}
};

inline int svec_dim(int d) { return d * (d + 1) / 2; }

/// Index of entry (i, j), i >= j, in the column-major lower-triangle layout
/// used by svec/smat.
inline int svec_index(int d, int i, int j) {
  if (j > i) std::swap(i, j);
  return j * d - j * (j - 1) / 2 + (i - j);
}

/// Scaled symmetric vectorization: off-diagonal entries are multiplied by
/// sqrt(2) so that svec(A) . svec(B) = tr(A B) for symmetric A, B.
inline Vector svec(const Matrix& m) {
  const int d = static_cast<int>(m.rows());
  Vector v(svec_dim(d));
  int idx = 0;
  for (int j = 0; j < d; ++j) {
    v[idx++] = m(j, j);
    for (int i = j + 1; i < d; ++i) {
      v[idx++] = kSqrt2 * 0.5 * (m(i, j) + m(j, i));
    }
  }
  return v;
}

/// Inverse of svec.
inline Matrix smat(const Vector& v, int d) {
  Matrix m(d, d);
  int idx = 0;
  for (int j = 0; j < d; ++j) {
    m(j, j) = v[idx++];
    for (int i = j + 1; i < d; ++i) {
      const double x = v[idx++] / kSqrt2;
      m(i, j) = x;
      m(j, i) = x;
    }
  }
  return m;
}

/// smat with the order inferred from the packed length.
inline Matrix smat(const Vector& v) {
  const int L = static_cast<int>(v.size());
  const int d = static_cast<int>((std::sqrt(8.0 * L + 1.0) - 1.0) / 2.0 + 0.5);
  if (svec_dim(d) != L) throw DimensionMismatch("smat: not a packed length");
  return smat(v, d);
}

inline Matrix symmetrized(const Matrix& m) {
  return 0.5 * (m + m.transpose());
}

inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.norm());
  return (m - m.transpose()).norm() <= tol * scale;
}

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m),
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Strict positive definiteness with an absolute eigenvalue floor.
inline bool is_positive_definite(const Matrix& m, double floor = 1e-12) {
  if (!is_symmetric(m, 1e-9)) return false;
  Eigen::LLT<Matrix> llt(symmetrized(m));
  if (llt.info() != Eigen::Success) return false;
  return min_eigenvalue(m) > floor;
}

inline bool is_positive_semidefinite(const Matrix& m, double tol = 1e-10) {
  if (!is_symmetric(m, 1e-9)) return false;
  const double scale = std::max(1.0, m.norm());
  return min_eigenvalue(m) >= -tol * scale;
}

/// Smallest singular value relative to the largest; zero for empty matrices.
inline double relative_min_singular_value(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0) return 0.0;
  return sv[sv.size() - 1] / sv[0];
}

}  // namespace covsteer
