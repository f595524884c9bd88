#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "covsteer/dynamics.hpp"
#include "covsteer/sdp.hpp"

namespace covsteer {

struct InvalidConfig : Error {
  using Error::Error;
};

/// All previous gains vanish, so the relative-change test is undefined.
struct ZeroPreviousNorm : Error {
  ZeroPreviousNorm() : Error("convergence test: previous gain norms sum to zero") {}
};

struct Irl1pConfig {
  double lambda = 0.0;
  double epsilon = 1e-3;    // weight floor
  double eps_conv = 1e-3;   // relative gain-change tolerance
  int l_max = 50;
  // Activity threshold used for the J_tau column of the trace; matches the
  // sparsity counting default so traces line up with pareto fronts.
  double active_threshold = 1e-6;

  void validate() const {
    if (lambda < 0.0) throw NegativeLambda();
    if (!(epsilon > 0.0)) throw InvalidConfig("epsilon must be positive");
    if (!(eps_conv > 0.0)) throw InvalidConfig("eps_conv must be positive");
    if (l_max < 1) throw InvalidConfig("l_max must be at least 1");
  }
};

enum class Irl1pTermination {
  Converged,
  IterationLimit,
  SolverFailure,
};

inline const char* to_string(Irl1pTermination t) {
  switch (t) {
    case Irl1pTermination::Converged: return "Converged";
    case Irl1pTermination::IterationLimit: return "IterationLimit";
    case Irl1pTermination::SolverFailure: return "SolverFailure";
  }
  return "?";
}

struct IterationRecord {
  int iteration = 0;                 // 1-based
  std::vector<double> weights;       // as used by this iteration's subproblem
  double j_sigma = 0.0;              // sum tr(Q Sigma_k) + tr(R Y_k)
  int j_tau = 0;                     // active stages at active_threshold
  std::vector<double> y_norms;       // ||Y_k||_F
  std::vector<double> y_lam_max;     // largest eigenvalue of Y_k
  std::vector<double> gain_norms;    // ||K_k||_F
  double max_residual = 0.0;         // worst certified-equality residual
  SdpStatus status = SdpStatus::Optimal;
};

struct IterationTrace {
  std::vector<IterationRecord> records;
  Irl1pTermination termination = Irl1pTermination::IterationLimit;
  int failed_iteration = 0;          // set when termination == SolverFailure
  SdpStatus failed_status = SdpStatus::Optimal;
  std::string message;
};

struct Irl1pResult {
  FeedbackPolicy policy;
  SdpSolution solution;
  IterationTrace trace;
};

inline std::vector<double> update_weights(const std::vector<Matrix>& Y,
                                          double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidConfig("epsilon must be positive");
  std::vector<double> w(Y.size());
  for (std::size_t k = 0; k < Y.size(); ++k) w[k] = 1.0 / (Y[k].norm() + epsilon);
  return w;
}

/// Relative change of the summed gain norms, compared as an absolute value:
/// the printed update rule is signed and would fire on any decrease, which
/// contradicts its own termination intent.
inline bool check_convergence(const std::vector<Matrix>& K_prev,
                              const std::vector<Matrix>& K_curr,
                              double eps_conv) {
  if (K_prev.size() != K_curr.size()) {
    throw DimensionMismatch("check_convergence: horizon mismatch");
  }
  double prev = 0.0, curr = 0.0;
  for (const Matrix& K : K_prev) prev += K.norm();
  for (const Matrix& K : K_curr) curr += K.norm();
  if (prev == 0.0) {
    if (curr == 0.0) return true;
    throw ZeroPreviousNorm();
  }
  return std::abs(curr - prev) / prev < eps_conv;
}

inline double transient_cost_of(const SdpSolution& sol,
                                const std::vector<StageCost>& costs) {
  double j = 0.0;
  for (std::size_t k = 0; k < sol.Y.size(); ++k) {
    j += (costs[k].Q * sol.Sigma[k]).trace() + (costs[k].R * sol.Y[k]).trace();
  }
  return j;
}

/// Algorithm: unit weights, then alternate a weighted penalized solve, gain
/// recovery, a convergence test (first testable on the second pass), and the
/// reweighting step. A non-Optimal subproblem aborts the loop with the trace
/// intact and the last Optimal solution as the result payload.
inline Irl1pResult run(const ValidatedProblem& problem, const Irl1pConfig& config,
                       SolverBackend& backend) {
  config.validate();
  const int N = problem.instance().horizon;
  const std::vector<StageCost>& costs = problem.instance().costs;

  Irl1pResult out;
  std::vector<double> weights(static_cast<std::size_t>(N), 1.0);
  std::vector<Matrix> gains_prev;
  bool have_solution = false;

  for (int l = 1; l <= config.l_max; ++l) {
    ConicProgram prog = build_weighted(problem, config.lambda, weights);
    SdpSolution sol = solve(prog, backend);
    if (sol.status != SdpStatus::Optimal) {
      out.trace.termination = Irl1pTermination::SolverFailure;
      out.trace.failed_iteration = l;
      out.trace.failed_status = sol.status;
      out.trace.message = "iteration " + std::to_string(l) + ": " +
                          to_string(sol.status) +
                          (sol.message.empty() ? "" : " (" + sol.message + ")");
      if (!have_solution) out.solution = std::move(sol);
      return out;
    }

    FeedbackPolicy policy = recover_gains(sol);
    const LosslessReport lossless = verify_lossless(sol);

    IterationRecord rec;
    rec.iteration = l;
    rec.weights = weights;
    rec.j_sigma = transient_cost_of(sol, costs);
    rec.y_norms.reserve(sol.Y.size());
    rec.y_lam_max.reserve(sol.Y.size());
    rec.gain_norms.reserve(policy.gains.size());
    for (const Matrix& Y : sol.Y) {
      const double nrm = Y.norm();
      rec.y_norms.push_back(nrm);
      if (Y.rows() == 1) {
        rec.y_lam_max.push_back(Y(0, 0));
      } else {
        Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(Y),
                                                 Eigen::EigenvaluesOnly);
        rec.y_lam_max.push_back(es.eigenvalues().maxCoeff());
      }
      if (nrm > config.active_threshold) ++rec.j_tau;
    }
    for (const Matrix& K : policy.gains) rec.gain_norms.push_back(K.norm());
    rec.max_residual = lossless.max_residual;
    rec.status = sol.status;
    out.trace.records.push_back(rec);

    bool converged = false;
    if (l > 1) {
      double prev = 0.0;
      for (const Matrix& K : gains_prev) prev += K.norm();
      if (prev == 0.0) {
        double curr = 0.0;
        for (const Matrix& K : policy.gains) curr += K.norm();
        converged = curr == 0.0;
      } else {
        converged = check_convergence(gains_prev, policy.gains, config.eps_conv);
      }
    }

    out.policy = std::move(policy);
    out.solution = std::move(sol);
    have_solution = true;
    if (converged) {
      out.trace.termination = Irl1pTermination::Converged;
      return out;
    }
    gains_prev = out.policy.gains;
    weights = update_weights(out.solution.Y, config.epsilon);
  }
  out.trace.termination = Irl1pTermination::IterationLimit;
  return out;
}

/// One row per completed iteration: iter, J_Sigma, J_tau, max_residual, the
/// N weights, then the N ||Y_k||_F values.
inline std::string trace_to_csv(const IterationTrace& trace, int horizon) {
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string csv = "iter,J_Sigma,J_tau,max_residual";
  for (int k = 0; k < horizon; ++k) csv += ",w_" + std::to_string(k);
  for (int k = 0; k < horizon; ++k) csv += ",y_norm_" + std::to_string(k);
  csv += "\n";
  for (const IterationRecord& rec : trace.records) {
    csv += std::to_string(rec.iteration) + "," + fmt(rec.j_sigma) + "," +
           std::to_string(rec.j_tau) + "," + fmt(rec.max_residual);
    for (double w : rec.weights) csv += "," + fmt(w);
    for (double y : rec.y_norms) csv += "," + fmt(y);
    csv += "\n";
  }
  return csv;
}

}  // namespace covsteer
