#pragma once

#include <string>
#include <vector>

#include "covsteer/conic.hpp"
#include "covsteer/dynamics.hpp"
#include "covsteer/ipm.hpp"
#include "covsteer/model.hpp"
#include "covsteer/stats.hpp"

namespace covsteer {

enum class SdpStatus { Optimal, Infeasible, NumericalFailure, IterationLimit };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::Optimal: return "Optimal";
    case SdpStatus::Infeasible: return "Infeasible";
    case SdpStatus::NumericalFailure: return "NumericalFailure";
    case SdpStatus::IterationLimit: return "IterationLimit";
  }
  return "?";
}

inline SdpStatus map_status(BackendStatus s) {
  switch (s) {
    case BackendStatus::Optimal: return SdpStatus::Optimal;
    case BackendStatus::PrimalInfeasible: return SdpStatus::Infeasible;
    case BackendStatus::IterationLimit: return SdpStatus::IterationLimit;
    case BackendStatus::DualInfeasible:
    case BackendStatus::NumericalFailure: return SdpStatus::NumericalFailure;
  }
  return SdpStatus::NumericalFailure;
}

struct SdpSolution {
  std::vector<Matrix> Sigma;  // N+1 covariances
  std::vector<Matrix> U;      // N input-state cross terms, m x n
  std::vector<Matrix> Y;      // N input covariances, m x m
  std::vector<double> t;      // epigraph values, present iff regularized
  double objective = 0.0;
  SdpStatus status = SdpStatus::NumericalFailure;
  int iterations = 0;
  std::string message;

  int horizon() const { return static_cast<int>(Y.size()); }
};

struct LosslessReport {
  std::vector<double> residuals;
  double max_residual = 0.0;
  double tol = 1e-5;
  bool pass = false;
};

struct NegativeLambda : Error {
  NegativeLambda() : Error("regularization weight lambda must be >= 0") {}
};
struct NonPositiveWeight : Error {
  explicit NonPositiveWeight(int stage)
      : Error("weight at stage " + std::to_string(stage) + " must be > 0"),
        stage(stage) {}
  int stage;
};

namespace sdp_detail {

/// tr(Q * block) as a linear expression; valid for any square Q.
inline LinExpr trace_product(const ConicProgram& prog, const Matrix& Q,
                             int block_id) {
  LinExpr acc;
  const int d = static_cast<int>(Q.rows());
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (Q(i, j) == 0.0) continue;
      acc += Q(i, j) * prog.entry(block_id, j, i);
    }
  }
  acc.compress();
  return acc;
}

/// Shared core of all three builders: variables, objective, boundary and
/// dynamics equalities, stage LMIs, terminal dominance, optional chance
/// bound. Leaves the StageLayout filled in.
inline ConicProgram build_base(const ValidatedProblem& problem) {
  const int N = problem.horizon();
  const int n = problem.state_dim();
  const int m = problem.input_dim();

  ConicProgram prog;
  StageLayout layout;
  layout.n = n;
  layout.m = m;
  layout.N = N;

  for (int k = 0; k <= N; ++k) {
    layout.sigma.push_back(
        prog.add_symmetric("Sigma_" + std::to_string(k), n));
  }
  for (int k = 0; k < N; ++k) {
    std::vector<int> ids;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) {
        ids.push_back(prog.add_scalar("U_" + std::to_string(k) + "_" +
                                      std::to_string(r) + std::to_string(c)));
      }
    }
    layout.u.push_back(std::move(ids));
    layout.y.push_back(prog.add_symmetric("Y_" + std::to_string(k), m));
  }

  for (int k = 0; k < N; ++k) {
    prog.add_objective_term(
        trace_product(prog, problem.cost(k).Q, layout.sigma[k]));
    prog.add_objective_term(
        trace_product(prog, problem.cost(k).R, layout.y[k]));
  }

  prog.add_matrix_equality(prog.block_expr(layout.sigma[0]),
                           symmetrized(problem.boundary().Sigma0),
                           /*symmetric=*/true);

  for (int k = 0; k < N; ++k) {
    const auto& st = problem.stage(k);
    const MatrixExpr sig = prog.block_expr(layout.sigma[k]);
    const MatrixExpr u = prog.scalar_grid_expr(layout.u[k], m, n);
    const MatrixExpr y = prog.block_expr(layout.y[k]);
    const Matrix At = st.A.transpose();
    const Matrix Bt = st.B.transpose();

    MatrixExpr next = prog.block_expr(layout.sigma[k + 1]);
    next -= st.A * sig * At;
    next -= st.A * u.transpose() * Bt;
    next -= st.B * u * At;
    next -= st.B * y * Bt;
    prog.add_matrix_equality(next, Matrix(st.D * st.D.transpose()),
                             /*symmetric=*/true);

    MatrixExpr lmi(n + m, n + m);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) lmi(i, j) = sig(i, j);
    }
    for (int r = 0; r < m; ++r) {
      for (int j = 0; j < n; ++j) {
        lmi(n + r, j) = u(r, j);
        lmi(j, n + r) = u(r, j);
      }
    }
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) lmi(n + r, n + c) = y(r, c);
    }
    prog.add_psd(lmi);
  }

  prog.add_psd(MatrixExpr::constant(symmetrized(problem.boundary().SigmaN)) -
               prog.block_expr(layout.sigma[N]));

  if (problem.chance()) {
    const double rho = chance_bound_rho(problem.chance()->u_max,
                                        problem.chance()->gamma, m);
    for (int k = 0; k < N; ++k) {
      prog.add_psd(MatrixExpr::constant(rho * Matrix::Identity(m, m)) -
                   prog.block_expr(layout.y[k]));
    }
  }

  prog.layout = std::move(layout);
  return prog;
}

}  // namespace sdp_detail

/// The plain covariance steering SDP: minimize sum tr(Q Sigma) + tr(R Y)
/// under boundary, dynamics, stage LMI, terminal dominance, and (when the
/// problem carries one) the input-norm chance bound.
inline ConicProgram build_standard(const ValidatedProblem& problem) {
  return sdp_detail::build_base(problem);
}

/// Adds the group-sparsity penalty lambda * sum_k w_k ||Y_k||_F through
/// per-stage epigraph scalars t_k >= ||svec(Y_k)||_2 (the sqrt(2)-scaled
/// vectorization makes that exactly the Frobenius norm).
inline ConicProgram build_weighted(const ValidatedProblem& problem,
                                   double lambda,
                                   const std::vector<double>& weights) {
  if (lambda < 0.0) throw NegativeLambda();
  const int N = problem.horizon();
  if (static_cast<int>(weights.size()) != N) {
    throw DimensionMismatch("build_weighted: expected one weight per stage");
  }
  for (int k = 0; k < N; ++k) {
    if (!(weights[k] > 0.0)) throw NonPositiveWeight(k);
  }
  ConicProgram prog = sdp_detail::build_base(problem);
  StageLayout layout = *prog.layout;
  const int m = layout.m;
  for (int k = 0; k < N; ++k) {
    const int tk = prog.add_scalar("t_" + std::to_string(k));
    layout.t.push_back(tk);
    std::vector<LinExpr> v;
    for (int j = 0; j < m; ++j) {
      for (int i = j; i < m; ++i) {
        const double scale = i == j ? 1.0 : kSqrt2;
        v.push_back(scale * prog.entry(layout.y[k], i, j));
      }
    }
    prog.add_soc(prog.scalar(tk), std::move(v));
    prog.add_objective_term(lambda * weights[k] * prog.scalar(tk));
  }
  prog.layout = std::move(layout);
  return prog;
}

/// Support-restricted program: masked stages get hard equalities
/// Y_k = 0, U_k = 0 on top of the standard objective and constraints.
inline ConicProgram build_masked(const ValidatedProblem& problem,
                                 const std::vector<bool>& mask) {
  const int N = problem.horizon();
  if (static_cast<int>(mask.size()) != N) {
    throw DimensionMismatch("build_masked: mask length");
  }
  ConicProgram prog = sdp_detail::build_base(problem);
  const StageLayout& layout = *prog.layout;
  const int n = layout.n, m = layout.m;
  for (int k = 0; k < N; ++k) {
    if (!mask[k]) continue;
    for (int id : layout.u[k]) prog.add_equality(prog.scalar(id), 0.0);
    for (int j = 0; j < m; ++j) {
      for (int i = j; i < m; ++i) {
        prog.add_equality(prog.entry(layout.y[k], i, j), 0.0);
      }
    }
    (void)n;
  }
  return prog;
}

/// Runs a backend and unpacks the per-stage blocks. Backend failures land in
/// the status, never as exceptions.
inline SdpSolution solve(const ConicProgram& prog, SolverBackend& backend) {
  BackendResult r = backend.solve(prog);
  SdpSolution sol;
  sol.status = map_status(r.status);
  sol.objective = r.objective;
  sol.iterations = r.iterations;
  sol.message = r.message;
  if (!prog.layout || r.x.size() == 0) return sol;
  const StageLayout& L = *prog.layout;
  for (int k = 0; k <= L.N; ++k) {
    sol.Sigma.push_back(symmetrized(prog.block_value(r.x, L.sigma[k])));
  }
  for (int k = 0; k < L.N; ++k) {
    Matrix U(L.m, L.n);
    for (int rr = 0; rr < L.m; ++rr) {
      for (int c = 0; c < L.n; ++c) {
        U(rr, c) = prog.scalar_value(r.x, L.u[k][rr * L.n + c]);
      }
    }
    sol.U.push_back(std::move(U));
    sol.Y.push_back(symmetrized(prog.block_value(r.x, L.y[k])));
  }
  for (int tk : L.t) sol.t.push_back(prog.scalar_value(r.x, tk));
  return sol;
}

/// Numerical certificate that the relaxation Y_k >= U_k Sigma_k^{-1} U_k'
/// closed at the optimum: r_k = ||Y_k - U_k Sigma_k^{-1} U_k'||_F scaled by
/// 1 + ||Y_k||_F.
inline LosslessReport verify_lossless(const SdpSolution& sol,
                                      double tol = 1e-5) {
  LosslessReport rep;
  rep.tol = tol;
  const int N = sol.horizon();
  for (int k = 0; k < N; ++k) {
    Eigen::LLT<Matrix> llt(symmetrized(sol.Sigma[k]));
    if (llt.info() != Eigen::Success) throw SingularCovariance(k);
    const Matrix gain_part = sol.U[k] * llt.solve(sol.U[k].transpose());
    const double r =
        (sol.Y[k] - gain_part).norm() / (1.0 + sol.Y[k].norm());
    rep.residuals.push_back(r);
    rep.max_residual = std::max(rep.max_residual, r);
  }
  rep.pass = rep.max_residual <= tol;
  return rep;
}

/// K_k = U_k Sigma_k^{-1} from a solved program.
inline FeedbackPolicy recover_gains(const SdpSolution& sol) {
  return recover_gains(sol.U, sol.Sigma);
}

}  // namespace covsteer
