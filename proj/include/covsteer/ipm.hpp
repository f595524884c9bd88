#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "covsteer/conic.hpp"
#include "covsteer/matrix_utils.hpp"

namespace covsteer {

enum class BackendStatus {
  Optimal,
  PrimalInfeasible,
  DualInfeasible,
  IterationLimit,
  NumericalFailure,
};

inline const char* to_string(BackendStatus s) {
  switch (s) {
    case BackendStatus::Optimal: return "Optimal";
    case BackendStatus::PrimalInfeasible: return "PrimalInfeasible";
    case BackendStatus::DualInfeasible: return "DualInfeasible";
    case BackendStatus::IterationLimit: return "IterationLimit";
    case BackendStatus::NumericalFailure: return "NumericalFailure";
  }
  return "?";
}

struct SolverSettings {
  double feastol = 1e-8;
  double abstol = 1e-8;
  double reltol = 1e-8;
  int max_iters = 100;
  double step_fraction = 0.99;
};

struct BackendResult {
  BackendStatus status = BackendStatus::NumericalFailure;
  Vector x;             // packed values in the program's original indexing
  double objective = 0.0;
  int iterations = 0;
  std::string message;
};

/// Behavioral backend interface: consumes a ConicProgram, produces packed
/// block values, a status, and the objective.
class SolverBackend {
 public:
  virtual ~SolverBackend() = default;
  virtual BackendResult solve(const ConicProgram& prog) = 0;
  /// Independent instance with the same configuration, for worker threads.
  /// Backends that cannot be replicated return nullptr and force serial use.
  virtual std::unique_ptr<SolverBackend> clone() const { return nullptr; }
};

namespace ipm_detail {

// ---------------------------------------------------------------------------
// Cone geometry: a product of dense PSD blocks in svec coordinates.
// ---------------------------------------------------------------------------

struct ConeGeometry {
  std::vector<int> sizes;
  std::vector<int> offsets;
  int total = 0;
  int degree = 0;  // sum of matrix orders

  static ConeGeometry make(const std::vector<int>& sizes) {
    ConeGeometry g;
    g.sizes = sizes;
    g.offsets.reserve(sizes.size());
    for (int d : sizes) {
      g.offsets.push_back(g.total);
      g.total += svec_dim(d);
      g.degree += d;
    }
    return g;
  }

  Matrix mat(const Vector& v, std::size_t b) const {
    return smat(v.segment(offsets[b], svec_dim(sizes[b])));
  }
  void set(Vector& v, std::size_t b, const Matrix& M) const {
    v.segment(offsets[b], svec_dim(sizes[b])) = svec(M);
  }
};

inline Vector cone_identity(const ConeGeometry& g) {
  Vector e = Vector::Zero(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    g.set(e, b, Matrix::Identity(g.sizes[b], g.sizes[b]));
  }
  return e;
}

inline double cone_min_eig(const ConeGeometry& g, const Vector& v) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    lo = std::min(lo, min_eigenvalue(g.mat(v, b)));
  }
  return lo;
}

/// svec((UV + VU)/2), the symmetric Jordan product.
inline Vector jordan(const ConeGeometry& g, const Vector& u, const Vector& v) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    const Matrix U = g.mat(u, b), V = g.mat(v, b);
    g.set(out, b, 0.5 * (U * V + V * U));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling. For each block, with S = Ls Ls', Z = Lz Lz' and
// SVD Lz' Ls = U diag(lam) V', set r = Ls V diag(lam)^{-1/2} and
// rti = Lz U diag(lam)^{-1/2} = r^{-T}; then r' Z r = r^{-1} S r^{-T} =
// diag(lam).
// ---------------------------------------------------------------------------

struct Scaling {
  std::vector<Matrix> r, rti;
  std::vector<Matrix> w_mat, winv_mat;  // r r' and rti rti'
  std::vector<Vector> lam;
};

inline Scaling identity_scaling(const ConeGeometry& g) {
  Scaling sc;
  for (int d : g.sizes) {
    sc.r.push_back(Matrix::Identity(d, d));
    sc.rti.push_back(Matrix::Identity(d, d));
    sc.w_mat.push_back(Matrix::Identity(d, d));
    sc.winv_mat.push_back(Matrix::Identity(d, d));
    sc.lam.push_back(Vector::Ones(d));
  }
  return sc;
}

inline std::optional<Scaling> compute_scaling(const ConeGeometry& g,
                                              const Vector& s,
                                              const Vector& z) {
  // Square factor of a nominally PD block. Blocks pinned to the cone
  // boundary by the penalty can lose definiteness to roundoff; flooring
  // their eigenvalues keeps a usable interior approximation.
  auto factor_of = [](const Matrix& M) -> std::optional<Matrix> {
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() == Eigen::Success) return Matrix(llt.matrixL());
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    if (es.info() != Eigen::Success) return std::nullopt;
    Vector ev = es.eigenvalues();
    const double floor = 1e-14 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (int i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor);
    return Matrix(es.eigenvectors() * ev.cwiseSqrt().asDiagonal());
  };
  Scaling sc;
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    auto mLs = factor_of(g.mat(s, b));
    auto mLz = factor_of(g.mat(z, b));
    if (!mLs || !mLz) return std::nullopt;
    const Matrix& Ls = *mLs;
    const Matrix& Lz = *mLz;
    Eigen::JacobiSVD<Matrix> svd(Lz.transpose() * Ls,
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector lam = svd.singularValues();
    if (lam.minCoeff() <= 0.0 || !lam.allFinite()) return std::nullopt;
    const Vector ispr = lam.cwiseSqrt().cwiseInverse();
    const Matrix r = Ls * svd.matrixV() * ispr.asDiagonal();
    const Matrix rti = Lz * svd.matrixU() * ispr.asDiagonal();
    sc.r.push_back(r);
    sc.rti.push_back(rti);
    sc.w_mat.push_back(r * r.transpose());
    sc.winv_mat.push_back(rti * rti.transpose());
    sc.lam.push_back(lam);
  }
  return sc;
}

// Scaling actions on svec-stacked vectors. z-like vectors scale by W,
// s-like by W^{-T}; the scaled pair meets at diag(lam).
inline Vector scale_W(const ConeGeometry& g, const Scaling& sc,
                      const Vector& z) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    g.set(out, b, sc.r[b].transpose() * g.mat(z, b) * sc.r[b]);
  }
  return out;
}

inline Vector scale_WmT(const ConeGeometry& g, const Scaling& sc,
                        const Vector& s) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    g.set(out, b, sc.rti[b].transpose() * g.mat(s, b) * sc.rti[b]);
  }
  return out;
}

inline Vector scale_WT(const ConeGeometry& g, const Scaling& sc,
                       const Vector& d) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    g.set(out, b, sc.r[b] * g.mat(d, b) * sc.r[b].transpose());
  }
  return out;
}

inline Vector apply_wtw(const ConeGeometry& g, const Scaling& sc,
                        const Vector& z) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    g.set(out, b, sc.w_mat[b] * g.mat(z, b) * sc.w_mat[b]);
  }
  return out;
}

inline Vector apply_winv(const ConeGeometry& g, const Scaling& sc,
                         const Vector& u) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    g.set(out, b, sc.winv_mat[b] * g.mat(u, b) * sc.winv_mat[b]);
  }
  return out;
}

/// Solves lam o u = d entrywise in matrix form: u_ij = 2 d_ij/(lam_i+lam_j).
inline Vector lambda_solve(const ConeGeometry& g, const Scaling& sc,
                           const Vector& d) {
  Vector out(g.total);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    Matrix D = g.mat(d, b);
    const Vector& lam = sc.lam[b];
    for (int i = 0; i < D.rows(); ++i) {
      for (int j = 0; j < D.cols(); ++j) {
        D(i, j) = 2.0 * D(i, j) / (lam(i) + lam(j));
      }
    }
    g.set(out, b, D);
  }
  return out;
}

/// Largest decrease rate of diag(lam) + alpha * mat(dir): returns
/// max(0, -lambda_min(L^{-1/2} M L^{-1/2})); the cone step bound is its
/// reciprocal.
inline double max_step_rate(const ConeGeometry& g, const Scaling& sc,
                            const Vector& dir) {
  double rate = 0.0;
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    Matrix M = g.mat(dir, b);
    const Vector& lam = sc.lam[b];
    for (int i = 0; i < M.rows(); ++i) {
      for (int j = 0; j < M.cols(); ++j) {
        M(i, j) /= std::sqrt(lam(i) * lam(j));
      }
    }
    rate = std::max(rate, -min_eigenvalue(M));
  }
  return rate;
}

// ---------------------------------------------------------------------------
// KKT solve on the full quasi-definite system
//   [ 0   A'  G'   ] [dx]   [u]
//   [ A   0   0    ] [dy] = [v]
//   [ G   0  -W'W  ] [dz]   [w]
// factored by row-pivoted LU, unshifted. Reducing to a Schur complement
// squares the conditioning of the scaled cone blocks, and symmetric LDL'
// with 1x1 pivots suffers unbounded element growth once the barrier
// degenerates, which stalls refinement; pivoted LU stays backward stable and
// costs only 2x at these sizes.
// ---------------------------------------------------------------------------

/// Extended-precision dot product. The tau-channel superposition divides by
/// near-cancelling inner products of large vectors; double accumulation there
/// injects direction error that stalls dual feasibility near degeneracy.
inline double xdot(const Vector& a, const Vector& b) {
  long double acc = 0.0L;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    acc += static_cast<long double>(a(i)) * static_cast<long double>(b(i));
  return static_cast<double>(acc);
}

/// Dense W'W for one cone block: the matrix of U -> w U w on svec space,
/// built by applying the map to the svec basis (column-major lower order).
inline Matrix wtw_block(const Matrix& w) {
  const int d = static_cast<int>(w.rows());
  const int L = svec_dim(d);
  Matrix out(L, L);
  int col = 0;
  for (int j = 0; j < d; ++j) {
    for (int i = j; i < d; ++i, ++col) {
      Matrix E = Matrix::Zero(d, d);
      if (i == j) {
        E(i, j) = 1.0;
      } else {
        E(i, j) = E(j, i) = 1.0 / kSqrt2;
      }
      out.col(col) = svec(w * E * w);
    }
  }
  return out;
}

struct KktFactors {
  Eigen::PartialPivLU<Matrix> lu;
  int nx = 0, ny = 0, nc = 0;
  bool ok = false;
  std::string message;
};

inline KktFactors factor_kkt(const ConeGeometry& g, const Scaling& sc,
                             const Matrix& A, const Matrix& G) {
  KktFactors f;
  f.nx = static_cast<int>(G.cols());
  f.ny = static_cast<int>(A.rows());
  f.nc = static_cast<int>(G.rows());
  const int n = f.nx + f.ny + f.nc;
  Matrix K = Matrix::Zero(n, n);
  if (f.ny > 0) {
    K.block(f.nx, 0, f.ny, f.nx) = A;
    K.block(0, f.nx, f.nx, f.ny) = A.transpose();
  }
  const int zoff = f.nx + f.ny;
  K.block(zoff, 0, f.nc, f.nx) = G;
  K.block(0, zoff, f.nx, f.nc) = G.transpose();
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    const int L = svec_dim(g.sizes[b]);
    K.block(zoff + g.offsets[b], zoff + g.offsets[b], L, L) =
        -wtw_block(sc.w_mat[b]);
  }
  if (!K.allFinite()) {
    f.message = "KKT matrix is not finite";
    return f;
  }
  f.lu.compute(K);
  if (f.lu.matrixLU().diagonal().cwiseAbs().minCoeff() > 0.0) {
    f.ok = true;
    return f;
  }
  // Exact zero pivot: nudge the diagonal, scaled per section and per cone
  // block, since W'W entries range over many orders of magnitude once the
  // penalty pins some blocks to the boundary.
  double xyscale = 1.0;
  if (f.ny > 0) xyscale = std::max(xyscale, A.cwiseAbs().maxCoeff());
  xyscale = std::max(xyscale, G.cwiseAbs().maxCoeff());
  Vector zshift(f.nc);
  for (std::size_t b = 0; b < g.sizes.size(); ++b) {
    const int L = svec_dim(g.sizes[b]);
    const double bscale = std::max(
        1e-300, K.block(zoff + g.offsets[b], zoff + g.offsets[b], L, L)
                    .cwiseAbs()
                    .maxCoeff());
    zshift.segment(g.offsets[b], L).setConstant(bscale);
  }
  for (double delta : {1e-13, 1e-11, 1e-9, 1e-7}) {
    Matrix kreg = K;
    for (int i = 0; i < f.nx; ++i) kreg(i, i) += delta * xyscale;
    for (int i = f.nx; i < zoff; ++i) kreg(i, i) -= delta * xyscale;
    for (int i = zoff; i < n; ++i) kreg(i, i) -= delta * zshift(i - zoff);
    f.lu.compute(kreg);
    if (f.lu.matrixLU().diagonal().cwiseAbs().minCoeff() > 0.0) {
      f.ok = true;
      return f;
    }
  }
  f.message = "cannot factor KKT matrix";
  return f;
}

struct Kkt3 {
  Vector dx, dy, dz;
};

inline Kkt3 solve3_once(const ConeGeometry& g, const Scaling& sc,
                        const Matrix& A, const Matrix& G, const KktFactors& f,
                        const Vector& u, const Vector& v, const Vector& w) {
  (void)g;
  (void)sc;
  (void)A;
  (void)G;
  Kkt3 out;
  Vector rhs(f.nx + f.ny + f.nc);
  rhs.segment(0, f.nx) = u;
  if (f.ny > 0) rhs.segment(f.nx, f.ny) = v;
  rhs.segment(f.nx + f.ny, f.nc) = w;
  const Vector sol = f.lu.solve(rhs);
  out.dx = sol.segment(0, f.nx);
  out.dy = f.ny > 0 ? Vector(sol.segment(f.nx, f.ny)) : Vector(0);
  out.dz = sol.segment(f.nx + f.ny, f.nc);
  return out;
}

inline Kkt3 solve3(const ConeGeometry& g, const Scaling& sc, const Matrix& A,
                   const Matrix& G, const KktFactors& f, const Vector& u,
                   const Vector& v, const Vector& w) {
  Kkt3 d = solve3_once(g, sc, A, G, f, u, v, w);
  // Iterative refinement on the full 3x3 system; the factorization is
  // shifted, so refinement carries the accuracy burden late in the solve.
  // Keeps the lowest-residual iterate seen, so a diverging correction can
  // never leave the solve worse than the raw factorization.
  const double rhs_norm = std::max({1.0, u.norm(), v.norm(), w.norm()});
  Kkt3 best = d;
  double best_res = std::numeric_limits<double>::infinity();
  double res0 = 0.0;
  int rounds = 0;
  for (int round = 0; round < 30; ++round) {
    const Vector res_u = u -
        (A.rows() > 0 ? Vector(A.transpose() * d.dy) : Vector::Zero(u.size())) -
        G.transpose() * d.dz;
    const Vector res_v = A.rows() > 0 ? Vector(v - A * d.dx) : Vector(0);
    const Vector res_w = w - (G * d.dx - apply_wtw(g, sc, d.dz));
    const double res_norm =
        std::max({res_u.norm(), res_v.size() > 0 ? res_v.norm() : 0.0,
                  res_w.norm()});
    if (round == 0) res0 = res_norm;
    if (res_norm < best_res) {
      best_res = res_norm;
      best = d;
    }
    if (res_norm <= 1e-14 * rhs_norm || res_norm > 4.0 * best_res) break;
    rounds = round + 1;
    Kkt3 e = solve3_once(g, sc, A, G, f, res_u, res_v, res_w);
    if (!e.dx.allFinite() || !e.dz.allFinite()) break;
    d.dx += e.dx;
    if (d.dy.size() > 0) d.dy += e.dy;
    d.dz += e.dz;
  }
  if (std::getenv("COVSTEER_IPM_VERBOSE2") != nullptr) {
    std::fprintf(stderr, "      refine rounds %2d res0 %9.3e final %9.3e\n",
                 rounds, res0, best_res);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Homogeneous self-dual embedding with Mehrotra predictor-corrector.
// ---------------------------------------------------------------------------

struct ConeLpResult {
  BackendStatus status = BackendStatus::NumericalFailure;
  Vector x, y, z, s;
  int iterations = 0;
  std::string message;
};

inline ConeLpResult conelp(const Vector& c, const Matrix& A, const Vector& b,
                           const Matrix& G, const Vector& h,
                           const std::vector<int>& cone_sizes,
                           const SolverSettings& st) {
  ConeLpResult out;
  const ConeGeometry geo = ConeGeometry::make(cone_sizes);
  const int nx = static_cast<int>(c.size());
  const int ny = static_cast<int>(b.size());
  const int nc = geo.total;

  const double resx0 = std::max(1.0, c.norm());
  const double resy0 = std::max(1.0, b.norm());
  const double resz0 = std::max(1.0, h.norm());
  const Vector e = cone_identity(geo);

  // Initial point: primal/dual least-squares solves at W = I, then shift
  // s and z into the interior.
  Vector x, y, z, s;
  {
    const Scaling sc = identity_scaling(geo);
    KktFactors f = factor_kkt(geo, sc, A, G);
    if (!f.ok) {
      out.message = "initialization: " + f.message;
      return out;
    }
    Kkt3 p = solve3(geo, sc, A, G, f, Vector::Zero(nx), b, h);
    x = p.dx;
    s = -p.dz;
    Kkt3 d = solve3(geo, sc, A, G, f, -c, Vector::Zero(ny), Vector::Zero(nc));
    y = d.dy.size() > 0 ? d.dy : Vector(0);
    z = d.dz;
    const double ts = -cone_min_eig(geo, s);
    if (ts >= -1e-8 * std::max(1.0, s.norm())) s += (1.0 + ts) * e;
    const double tz = -cone_min_eig(geo, z);
    if (tz >= -1e-8 * std::max(1.0, z.norm())) z += (1.0 + tz) * e;
  }
  double tau = 1.0, kappa = 1.0;

  int stalls = 0;
  int no_progress = 0;
  // Track the best iterate seen: late steps can lose accuracy after the
  // scaling degenerates, and the epilogue falls back on this point.
  double best_metric = std::numeric_limits<double>::infinity();
  Vector best_x = x, best_y = y, best_z = z, best_s = s;
  double best_tau = tau;
  double best_pres = std::numeric_limits<double>::infinity();
  double best_dres = std::numeric_limits<double>::infinity();
  double best_relgap = std::numeric_limits<double>::infinity();
  double best_cert_p = std::numeric_limits<double>::infinity();
  double best_cert_d = std::numeric_limits<double>::infinity();
  Vector best_cert_y, best_cert_z, best_cert_x, best_cert_s;
  for (int iter = 0; iter <= st.max_iters; ++iter) {
    out.iterations = iter;
    // Unscaled HSD residuals.
    const Vector rx = (ny > 0 ? Vector(A.transpose() * y) : Vector::Zero(nx)) +
                      G.transpose() * z + c * tau;
    const Vector ry = ny > 0 ? Vector(A * x - b * tau) : Vector(0);
    const Vector rz = G * x + s - h * tau;
    const double rt = kappa + c.dot(x) + (ny > 0 ? b.dot(y) : 0.0) + h.dot(z);
    const double gap = s.dot(z);

    const double pcost = c.dot(x) / tau;
    const double pres =
        std::max(ny > 0 ? ry.norm() / resy0 : 0.0, rz.norm() / resz0) / tau;
    const double dres = rx.norm() / resx0 / tau;
    const double absgap = gap / (tau * tau);
    const double relgap = absgap / std::max(1.0, std::abs(pcost));
    const double metric = std::max({pres, dres, relgap});
    if (metric < best_metric) {
      best_metric = metric;
      best_x = x;
      best_y = y;
      best_z = z;
      best_s = s;
      best_tau = tau;
      best_pres = pres;
      best_dres = dres;
      best_relgap = relgap;
      no_progress = 0;
    } else {
      ++no_progress;
    }
    // Certificate quality: scale-free measures of how well (y,z) or (x,s)
    // certify infeasibility; either improving still counts as progress.
    double cert_p = std::numeric_limits<double>::infinity();
    const double denom_p = -((ny > 0 ? b.dot(y) : 0.0) + h.dot(z));
    if (denom_p > 0.0) {
      const Vector cert = (ny > 0 ? Vector(A.transpose() * y) : Vector::Zero(nx)) +
                          G.transpose() * z;
      cert_p = cert.norm() / resx0 / denom_p;
    }
    double cert_d = std::numeric_limits<double>::infinity();
    const double denom_d = -c.dot(x);
    if (denom_d > 0.0) {
      const double nAx = ny > 0 ? (A * x).norm() / resy0 : 0.0;
      const double nGx = (G * x + s).norm() / resz0;
      cert_d = std::max(nAx, nGx) / denom_d;
    }
    if (cert_p < best_cert_p || cert_d < best_cert_d) no_progress = 0;
    if (cert_p < best_cert_p) {
      best_cert_p = cert_p;
      best_cert_y = y;
      best_cert_z = z;
    }
    if (cert_d < best_cert_d) {
      best_cert_d = cert_d;
      best_cert_x = x;
      best_cert_s = s;
    }
    if (std::getenv("COVSTEER_IPM_VERBOSE") != nullptr) {
      std::fprintf(stderr,
                   "ipm iter %3d pres %9.3e dres %9.3e relgap %9.3e "
                   "tau %9.3e kappa %9.3e certp %9.3e certd %9.3e\n",
                   iter, pres, dres, relgap, tau, kappa, cert_p, cert_d);
    }

    if (pres <= st.feastol && dres <= st.feastol &&
        (absgap <= st.abstol || relgap <= st.reltol)) {
      out.status = BackendStatus::Optimal;
      out.x = x / tau;
      out.y = y / tau;
      out.z = z / tau;
      out.s = s / tau;
      return out;
    }
    if (cert_p <= st.feastol) {
      out.status = BackendStatus::PrimalInfeasible;
      out.message = "primal infeasibility certificate";
      out.y = y;
      out.z = z;
      return out;
    }
    if (cert_d <= st.feastol) {
      out.status = BackendStatus::DualInfeasible;
      out.message = "dual infeasibility certificate";
      out.x = x;
      out.s = s;
      return out;
    }
    if (no_progress >= 8) {
      // Bouncing at the accuracy floor; the best iterate is what there is.
      out.message = "progress stalled";
      break;
    }
    if (iter == st.max_iters) break;

    auto msc = compute_scaling(geo, s, z);
    if (!msc) {
      out.message = "loss of cone interior while scaling";
      break;
    }
    const Scaling& sc = *msc;
    KktFactors f = factor_kkt(geo, sc, A, G);
    if (!f.ok) {
      out.message = f.message;
      break;
    }
    const double mu = (gap + tau * kappa) / (geo.degree + 1);

    // Shared tau-channel solve for this factorization.
    const Kkt3 t1 = solve3(geo, sc, A, G, f, -c, b, h);
    const double theta1 =
        xdot(c, t1.dx) + (ny > 0 ? xdot(b, t1.dy) : 0.0) + xdot(h, t1.dz);

    Vector lam_sq(geo.total);
    for (std::size_t bidx = 0; bidx < geo.sizes.size(); ++bidx) {
      geo.set(lam_sq, bidx,
              Matrix(sc.lam[bidx].array().square().matrix().asDiagonal()));
    }

    auto take_step = [&](double eta, const Vector& ds_rhs, double dkappa_rhs,
                         Vector& dx, Vector& dy, Vector& dz, Vector& ds,
                         double& dtau, double& dkappa) -> bool {
      const Vector dtil = lambda_solve(geo, sc, ds_rhs);
      const Kkt3 p0 = solve3(geo, sc, A, G, f, -(1.0 - eta) * rx,
                             -(1.0 - eta) * ry,
                             Vector(-(1.0 - eta) * rz - scale_WT(geo, sc, dtil)));
      const double theta0 =
          xdot(c, p0.dx) + (ny > 0 ? xdot(b, p0.dy) : 0.0) + xdot(h, p0.dz);
      const double den = theta1 - kappa / tau;
      if (std::abs(den) < 1e-300) return false;
      dtau = (-(1.0 - eta) * rt - dkappa_rhs / tau - theta0) / den;
      dx = p0.dx + dtau * t1.dx;
      dy = ny > 0 ? Vector(p0.dy + dtau * t1.dy) : Vector(0);
      dz = p0.dz + dtau * t1.dz;
      ds = scale_WT(geo, sc, Vector(dtil - scale_W(geo, sc, dz)));
      dkappa = (dkappa_rhs - kappa * dtau) / tau;
      return dx.allFinite() && dz.allFinite() && ds.allFinite() &&
             std::isfinite(dtau) && std::isfinite(dkappa);
    };

    auto step_bound = [&](const Vector& ds, const Vector& dz, double dtau,
                          double dkappa) {
      double rate = std::max(max_step_rate(geo, sc, scale_WmT(geo, sc, ds)),
                             max_step_rate(geo, sc, scale_W(geo, sc, dz)));
      if (dtau < 0.0) rate = std::max(rate, -dtau / tau);
      if (dkappa < 0.0) rate = std::max(rate, -dkappa / kappa);
      return rate > 0.0 ? 1.0 / rate : std::numeric_limits<double>::infinity();
    };

    // Predictor.
    Vector dx_a, dy_a, dz_a, ds_a;
    double dtau_a, dkappa_a;
    if (!take_step(0.0, Vector(-lam_sq), -tau * kappa, dx_a, dy_a, dz_a, ds_a,
                   dtau_a, dkappa_a)) {
      out.message = "predictor step failed";
      break;
    }
    const double alpha_aff = std::min(1.0, step_bound(ds_a, dz_a, dtau_a,
                                                      dkappa_a));
    const double sigma =
        std::pow(std::clamp(1.0 - alpha_aff, 0.0, 1.0), 3.0);

    // Corrector: Mehrotra second-order terms in the scaled space.
    const Vector corr = jordan(geo, scale_WmT(geo, sc, ds_a),
                               scale_W(geo, sc, dz_a));
    Vector dx_c, dy_c, dz_c, ds_c;
    double dtau_c, dkappa_c;
    const Vector ds_rhs = -lam_sq - corr + sigma * mu * e;
    const double dkappa_rhs = -tau * kappa - dtau_a * dkappa_a + sigma * mu;
    if (!take_step(sigma, ds_rhs, dkappa_rhs, dx_c, dy_c, dz_c, ds_c, dtau_c,
                   dkappa_c)) {
      out.message = "corrector step failed";
      break;
    }
    const double alpha =
        std::min(1.0, st.step_fraction *
                          step_bound(ds_c, dz_c, dtau_c, dkappa_c));
    if (std::getenv("COVSTEER_IPM_VERBOSE") != nullptr) {
      std::fprintf(stderr,
                   "    alpha_aff %9.3e sigma %9.3e alpha %9.3e |t1| %9.3e "
                   "dtau_c %+9.3e den %+9.3e\n",
                   alpha_aff, sigma, alpha,
                   std::max({t1.dx.norm(), t1.dy.size() ? t1.dy.norm() : 0.0,
                             t1.dz.norm()}),
                   dtau_c, theta1 - kappa / tau);
    }
    x += alpha * dx_c;
    if (ny > 0) y += alpha * dy_c;
    z += alpha * dz_c;
    s += alpha * ds_c;
    tau += alpha * dtau_c;
    kappa += alpha * dkappa_c;
    if (!(tau > 0.0) || !(kappa > 0.0) || !x.allFinite() || !s.allFinite()) {
      x -= alpha * dx_c;
      if (ny > 0) y -= alpha * dy_c;
      z -= alpha * dz_c;
      s -= alpha * ds_c;
      tau -= alpha * dtau_c;
      kappa -= alpha * dkappa_c;
      out.message = "iterate left the feasible region of the embedding";
      break;
    }
    stalls = alpha < 1e-6 ? stalls + 1 : 0;
    if (stalls >= 3) {
      out.message = "step sizes collapsed";
      break;
    }
  }

  // Iteration limit, stall, or a numerical breakdown mid-iteration: fall
  // back on the best iterate seen, accepting a mildly relaxed tolerance
  // before reporting failure.
  out.x = best_x / best_tau;
  out.y = best_y / best_tau;
  out.z = best_z / best_tau;
  out.s = best_s / best_tau;
  const double relax = 100.0;
  if (best_pres <= relax * st.feastol && best_dres <= relax * st.feastol &&
      best_relgap <= relax * st.reltol) {
    out.status = BackendStatus::Optimal;
    out.message = "converged at relaxed tolerance";
  } else if (best_cert_p <= relax * st.feastol &&
             best_cert_p < 1e-4 * best_metric) {
    // The iterates left optimality far behind and honed a primal
    // infeasibility certificate instead.
    out.status = BackendStatus::PrimalInfeasible;
    out.message = "primal infeasibility certificate at relaxed tolerance";
    out.y = best_cert_y;
    out.z = best_cert_z;
  } else if (best_cert_d <= relax * st.feastol &&
             best_cert_d < 1e-4 * best_metric) {
    out.status = BackendStatus::DualInfeasible;
    out.message = "dual infeasibility certificate at relaxed tolerance";
    out.x = best_cert_x;
    out.s = best_cert_s;
  } else if (out.message.empty()) {
    out.status = BackendStatus::IterationLimit;
    out.message = "iteration limit reached";
  } else {
    out.status = BackendStatus::NumericalFailure;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Presolve: repeatedly substitute single-variable equalities, then drop
// PSD rows/columns whose diagonal entry is identically zero (their whole row
// is forced to vanish). This restores a strict interior for support-masked
// programs whose stage LMIs are forced singular.
// ---------------------------------------------------------------------------

struct PsdWork {
  int size = 0;
  std::vector<LinExpr> lower;  // indexed svec_index(size, i, j), i >= j
  std::vector<char> active;

  LinExpr& ent(int i, int j) { return lower[svec_index(size, i, j)]; }
  const LinExpr& ent(int i, int j) const {
    return lower[svec_index(size, i, j)];
  }
};

struct StandardForm {
  enum class Outcome { Reduced, Solved, Infeasible, Unbounded };
  Outcome outcome = Outcome::Reduced;
  std::string message;

  Vector c;
  Matrix A;
  Vector b;
  Matrix G;
  Vector h;
  std::vector<int> cone_sizes;
  std::vector<int> free_to_full;
  std::vector<char> fixed_mask;
  Vector fixed_values;  // full packed length; meaningful where fixed_mask
};

inline StandardForm presolve_standard_form(const ConicProgram& prog) {
  StandardForm sf;
  const int n_full = prog.packed_size();
  sf.fixed_mask.assign(n_full, 0);
  sf.fixed_values = Vector::Zero(n_full);

  auto substitute = [&](LinExpr& e) {
    std::vector<std::pair<int, double>> keep;
    keep.reserve(e.terms.size());
    for (const auto& [idx, coef] : e.terms) {
      if (sf.fixed_mask[idx]) {
        e.constant += coef * sf.fixed_values(idx);
      } else {
        keep.emplace_back(idx, coef);
      }
    }
    e.terms = std::move(keep);
    e.compress(1e-14);
  };

  std::vector<LinExpr> eqs = prog.equalities();

  std::vector<PsdWork> psd;
  for (const auto& F : prog.psd_memberships()) {
    PsdWork w;
    w.size = F.rows;
    w.lower.resize(svec_dim(F.rows));
    w.active.assign(F.rows, 1);
    for (int i = 0; i < F.rows; ++i)
      for (int j = 0; j <= i; ++j) w.ent(i, j) = F(i, j);
    psd.push_back(std::move(w));
  }
  // Second-order cones become arrow-shaped PSD blocks
  // [[t, v'], [v, t I]], exact for real vectors.
  for (const auto& soc : prog.soc_memberships()) {
    PsdWork w;
    const int dv = static_cast<int>(soc.v.size());
    w.size = dv + 1;
    w.lower.resize(svec_dim(w.size));
    w.active.assign(w.size, 1);
    w.ent(0, 0) = soc.t;
    for (int r = 0; r < dv; ++r) {
      w.ent(r + 1, 0) = soc.v[r];
      w.ent(r + 1, r + 1) = soc.t;
    }
    psd.push_back(std::move(w));
  }

  auto fix_var = [&](int idx, double value) -> bool {
    if (sf.fixed_mask[idx]) {
      return std::abs(sf.fixed_values(idx) - value) <=
             1e-7 * (1.0 + std::abs(value));
    }
    sf.fixed_mask[idx] = 1;
    sf.fixed_values(idx) = value;
    return true;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<LinExpr> remaining;
    remaining.reserve(eqs.size());
    for (LinExpr& e : eqs) {
      substitute(e);
      if (e.terms.empty()) {
        if (std::abs(e.constant) > 1e-8 * (1.0 + std::abs(e.constant))) {
          sf.outcome = StandardForm::Outcome::Infeasible;
          sf.message = "conflicting equality constraints";
          return sf;
        }
        changed = true;
        continue;
      }
      if (e.terms.size() == 1 && std::abs(e.terms[0].second) > 1e-12) {
        const double value = -e.constant / e.terms[0].second;
        if (!fix_var(e.terms[0].first, value)) {
          sf.outcome = StandardForm::Outcome::Infeasible;
          sf.message = "conflicting variable fixings";
          return sf;
        }
        changed = true;
        continue;
      }
      remaining.push_back(std::move(e));
    }
    eqs = std::move(remaining);

    for (PsdWork& w : psd) {
      for (int i = 0; i < w.size; ++i) {
        if (!w.active[i]) continue;
        LinExpr& dii = w.ent(i, i);
        substitute(dii);
        if (!dii.terms.empty()) continue;
        if (dii.constant < -1e-9 * (1.0 + std::abs(dii.constant))) {
          sf.outcome = StandardForm::Outcome::Infeasible;
          sf.message = "PSD membership has a negative forced diagonal";
          return sf;
        }
        if (std::abs(dii.constant) > 1e-9) continue;  // positive constant, fine
        // Identically zero diagonal: the whole row/column must vanish.
        for (int j = 0; j < w.size; ++j) {
          if (j == i || !w.active[j]) continue;
          LinExpr off = w.ent(std::max(i, j), std::min(i, j));
          substitute(off);
          if (off.terms.empty()) {
            if (std::abs(off.constant) > 1e-8) {
              sf.outcome = StandardForm::Outcome::Infeasible;
              sf.message = "PSD membership forces a nonzero off-diagonal";
              return sf;
            }
          } else {
            eqs.push_back(std::move(off));
          }
        }
        w.active[i] = 0;
        changed = true;
      }
    }
  }

  // Usage scan; untouched variables are fixed at zero (or witness an
  // unbounded objective).
  std::vector<char> used(n_full, 0);
  for (const LinExpr& e : eqs) {
    for (const auto& [idx, coef] : e.terms) used[idx] = 1;
  }
  for (PsdWork& w : psd) {
    for (int i = 0; i < w.size; ++i) {
      if (!w.active[i]) continue;
      for (int j = 0; j <= i; ++j) {
        if (!w.active[j]) continue;
        LinExpr& e = w.ent(i, j);
        substitute(e);
        for (const auto& [idx, coef] : e.terms) used[idx] = 1;
      }
    }
  }
  const std::vector<double>& c_full = prog.objective();
  for (int idx = 0; idx < n_full; ++idx) {
    if (sf.fixed_mask[idx] || used[idx]) continue;
    if (std::abs(c_full[idx]) > 1e-12) {
      sf.outcome = StandardForm::Outcome::Unbounded;
      sf.message = "objective is unbounded along an unconstrained variable";
      return sf;
    }
    sf.fixed_mask[idx] = 1;
    sf.fixed_values(idx) = 0.0;
  }

  std::vector<int> full_to_free(n_full, -1);
  for (int idx = 0; idx < n_full; ++idx) {
    if (!sf.fixed_mask[idx]) {
      full_to_free[idx] = static_cast<int>(sf.free_to_full.size());
      sf.free_to_full.push_back(idx);
    }
  }
  const int nx = static_cast<int>(sf.free_to_full.size());

  // Constant-only PSD blocks reduce to a feasibility check.
  std::vector<const PsdWork*> live_blocks;
  for (const PsdWork& w : psd) {
    std::vector<int> act;
    for (int i = 0; i < w.size; ++i) {
      if (w.active[i]) act.push_back(i);
    }
    if (act.empty()) continue;
    bool has_terms = false;
    for (int ai : act) {
      for (int aj : act) {
        if (aj > ai) continue;
        if (!w.ent(ai, aj).terms.empty()) has_terms = true;
      }
    }
    if (!has_terms) {
      Matrix F0(act.size(), act.size());
      for (std::size_t i = 0; i < act.size(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          F0(i, j) = F0(j, i) = w.ent(act[i], act[j]).constant;
        }
      }
      const double floor = -1e-7 * (1.0 + F0.cwiseAbs().maxCoeff());
      if (min_eigenvalue(F0) < floor) {
        sf.outcome = StandardForm::Outcome::Infeasible;
        sf.message = "constant PSD membership is violated";
        return sf;
      }
      continue;  // satisfied, drop
    }
    live_blocks.push_back(&w);
  }

  if (nx == 0) {
    sf.outcome = StandardForm::Outcome::Solved;
    return sf;
  }

  sf.c = Vector::Zero(nx);
  for (int r = 0; r < nx; ++r) sf.c(r) = c_full[sf.free_to_full[r]];

  sf.A = Matrix::Zero(static_cast<int>(eqs.size()), nx);
  sf.b = Vector::Zero(static_cast<int>(eqs.size()));
  for (std::size_t r = 0; r < eqs.size(); ++r) {
    sf.b(static_cast<int>(r)) = -eqs[r].constant;
    for (const auto& [idx, coef] : eqs[r].terms) {
      sf.A(static_cast<int>(r), full_to_free[idx]) += coef;
    }
  }

  int nc = 0;
  for (const PsdWork* w : live_blocks) {
    int d = 0;
    for (int i = 0; i < w->size; ++i) d += w->active[i] ? 1 : 0;
    sf.cone_sizes.push_back(d);
    nc += svec_dim(d);
  }
  sf.G = Matrix::Zero(nc, nx);
  sf.h = Vector::Zero(nc);
  int row = 0;
  for (const PsdWork* w : live_blocks) {
    std::vector<int> act;
    for (int i = 0; i < w->size; ++i) {
      if (w->active[i]) act.push_back(i);
    }
    // Lower triangle in block-local column-major order matches svec.
    for (std::size_t lj = 0; lj < act.size(); ++lj) {
      for (std::size_t li = lj; li < act.size(); ++li) {
        const LinExpr& e = w->ent(act[li], act[lj]);
        const double scale = li == lj ? 1.0 : kSqrt2;
        sf.h(row) = scale * e.constant;
        for (const auto& [idx, coef] : e.terms) {
          sf.G(row, full_to_free[idx]) -= scale * coef;
        }
        ++row;
      }
    }
  }
  sf.outcome = StandardForm::Outcome::Reduced;
  return sf;
}

}  // namespace ipm_detail

/// Dense interior-point backend: presolve to standard form, then a
/// homogeneous self-dual predictor-corrector on the product of PSD blocks
/// (second-order cones enter through an exact arrow lift).
class InteriorPointBackend : public SolverBackend {
 public:
  explicit InteriorPointBackend(SolverSettings settings = {})
      : settings_(settings) {}

  const SolverSettings& settings() const { return settings_; }
  SolverSettings& settings() { return settings_; }

  std::unique_ptr<SolverBackend> clone() const override {
    return std::make_unique<InteriorPointBackend>(settings_);
  }

  BackendResult solve(const ConicProgram& prog) override {
    using ipm_detail::StandardForm;
    BackendResult res;
    StandardForm sf = ipm_detail::presolve_standard_form(prog);
    switch (sf.outcome) {
      case StandardForm::Outcome::Infeasible:
        res.status = BackendStatus::PrimalInfeasible;
        res.message = sf.message;
        return res;
      case StandardForm::Outcome::Unbounded:
        res.status = BackendStatus::DualInfeasible;
        res.message = sf.message;
        return res;
      case StandardForm::Outcome::Solved: {
        res.status = BackendStatus::Optimal;
        res.x = sf.fixed_values;
        res.objective = objective_of(prog, res.x);
        res.message = "fully determined by presolve";
        return res;
      }
      case StandardForm::Outcome::Reduced:
        break;
    }

    if (sf.cone_sizes.empty()) return solve_linear(prog, sf);

    // Objective scaling keeps large penalty weights inside the solver's
    // comfortable range; the reported objective uses the original weights.
    const double obj_scale = std::max(1.0, sf.c.cwiseAbs().maxCoeff());
    ipm_detail::ConeLpResult lp = ipm_detail::conelp(
        Vector(sf.c / obj_scale), sf.A, sf.b, sf.G, sf.h, sf.cone_sizes,
        settings_);
    res.status = lp.status;
    res.iterations = lp.iterations;
    res.message = lp.message;
    if (lp.x.size() > 0 &&
        (lp.status == BackendStatus::Optimal ||
         lp.status == BackendStatus::IterationLimit)) {
      res.x = restore(sf, lp.x);
      res.objective = objective_of(prog, res.x);
    }
    return res;
  }

 private:
  static Vector restore(const ipm_detail::StandardForm& sf,
                        const Vector& x_reduced) {
    Vector full = sf.fixed_values;
    for (std::size_t r = 0; r < sf.free_to_full.size(); ++r) {
      full(sf.free_to_full[r]) = x_reduced(static_cast<int>(r));
    }
    return full;
  }

  static double objective_of(const ConicProgram& prog, const Vector& x_full) {
    const std::vector<double>& c = prog.objective();
    double obj = prog.objective_offset();
    for (int i = 0; i < prog.packed_size(); ++i) obj += c[i] * x_full(i);
    return obj;
  }

  // No cone rows left: an equality-constrained linear objective. Any
  // feasible point is optimal iff c lies in the row space of A.
  BackendResult solve_linear(const ConicProgram& prog,
                             const ipm_detail::StandardForm& sf) {
    BackendResult res;
    Eigen::ColPivHouseholderQR<Matrix> qr(sf.A);
    const Vector x = qr.solve(sf.b);
    if ((sf.A * x - sf.b).norm() > 1e-8 * (1.0 + sf.b.norm())) {
      res.status = BackendStatus::PrimalInfeasible;
      res.message = "inconsistent equality constraints";
      return res;
    }
    Eigen::ColPivHouseholderQR<Matrix> qrt(Matrix(sf.A.transpose()));
    const Vector nu = qrt.solve(sf.c);
    if ((sf.A.transpose() * nu - sf.c).norm() > 1e-8 * (1.0 + sf.c.norm())) {
      res.status = BackendStatus::DualInfeasible;
      res.message = "objective decreases along the equality null space";
      return res;
    }
    res.status = BackendStatus::Optimal;
    res.x = restore(sf, x);
    res.objective = objective_of(prog, res.x);
    return res;
  }

  SolverSettings settings_;
};

}  // namespace covsteer
