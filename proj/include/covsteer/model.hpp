#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "covsteer/matrix_utils.hpp"

namespace covsteer {

/// One stage of the linear stochastic dynamics
/// x_{k+1} = A x_k + B u_k + D w_k, with w_k ~ N(0, I).
struct StageDynamics {
  Matrix A;  // n x n state transition, must be invertible
  Matrix B;  // n x m input map
  Matrix D;  // n x p noise map
};

struct StageCost {
  Matrix Q;  // n x n symmetric PSD state weight
  Matrix R;  // m x m symmetric PD input weight
};

struct BoundaryConditions {
  Matrix Sigma0;  // initial covariance, PD
  Matrix SigmaN;  // terminal covariance upper bound, PD
};

/// Chance constraint P(||u_k||_2 <= u_max) >= 1 - gamma on the input norm.
struct ChanceConstraintSpec {
  double u_max = 0.0;
  double gamma = 0.0;
};

/// Full problem data. Means are implicitly zero; there are no mean fields.
struct ProblemInstance {
  int horizon = 0;  // N, number of stages
  std::vector<StageDynamics> stages;
  std::vector<StageCost> costs;
  BoundaryConditions boundary;
  std::optional<ChanceConstraintSpec> chance;
  std::string label;

  int state_dim() const {
    return stages.empty() ? 0 : static_cast<int>(stages[0].A.rows());
  }
  int input_dim() const {
    return stages.empty() ? 0 : static_cast<int>(stages[0].B.cols());
  }
  int noise_dim() const {
    return stages.empty() ? 0 : static_cast<int>(stages[0].D.cols());
  }
};

enum class ValidationIssueKind {
  SingularTransition,
  NotPositiveDefinite,
  DimensionMismatch,
  TerminalNoiseDominance,
};

inline const char* to_string(ValidationIssueKind k) {
  switch (k) {
    case ValidationIssueKind::SingularTransition: return "SingularTransition";
    case ValidationIssueKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ValidationIssueKind::DimensionMismatch: return "DimensionMismatch";
    case ValidationIssueKind::TerminalNoiseDominance:
      return "TerminalNoiseDominance";
  }
  return "?";
}

struct ValidationIssue {
  ValidationIssueKind kind;
  int stage = -1;      // -1 when not stage specific
  std::string detail;  // which matrix / what went wrong
};

struct ValidationError {
  std::vector<ValidationIssue> issues;

  std::string message() const {
    std::ostringstream os;
    os << "invalid problem:";
    for (const auto& issue : issues) {
      os << "\n  - " << to_string(issue.kind);
      if (issue.stage >= 0) os << " at stage " << issue.stage;
      if (!issue.detail.empty()) os << ": " << issue.detail;
    }
    return os.str();
  }
};

/// Immutable wrapper certifying that every model invariant holds. Safe to
/// share across concurrent workers.
class ValidatedProblem {
 public:
  const ProblemInstance& instance() const { return instance_; }
  int horizon() const { return instance_.horizon; }
  int state_dim() const { return instance_.state_dim(); }
  int input_dim() const { return instance_.input_dim(); }
  int noise_dim() const { return instance_.noise_dim(); }
  const StageDynamics& stage(int k) const { return instance_.stages.at(k); }
  const StageCost& cost(int k) const { return instance_.costs.at(k); }
  const BoundaryConditions& boundary() const { return instance_.boundary; }
  const std::optional<ChanceConstraintSpec>& chance() const {
    return instance_.chance;
  }

 private:
  friend std::variant<ValidatedProblem, ValidationError> validate(
      const ProblemInstance&);
  explicit ValidatedProblem(ProblemInstance instance)
      : instance_(std::move(instance)) {}
  ProblemInstance instance_;
};

/// Checks every model invariant. Pure; the instance is never mutated.
/// Rank tolerance 1e-10 is relative to the largest singular value; PD checks
/// use an absolute eigenvalue floor of 1e-12.
inline std::variant<ValidatedProblem, ValidationError> validate(
    const ProblemInstance& instance) {
  constexpr double kRankTol = 1e-10;
  constexpr double kPdFloor = 1e-12;
  constexpr double kPsdTol = 1e-10;

  ValidationError err;
  auto add = [&err](ValidationIssueKind kind, int stage, std::string detail) {
    err.issues.push_back({kind, stage, std::move(detail)});
  };

  const int N = instance.horizon;
  if (N < 1) {
    add(ValidationIssueKind::DimensionMismatch, -1, "horizon must be >= 1");
    return err;
  }
  if (static_cast<int>(instance.stages.size()) != N ||
      static_cast<int>(instance.costs.size()) != N) {
    add(ValidationIssueKind::DimensionMismatch, -1,
        "expected " + std::to_string(N) + " stages and costs, got " +
            std::to_string(instance.stages.size()) + " / " +
            std::to_string(instance.costs.size()));
    return err;
  }

  const int n = instance.state_dim();
  const int m = instance.input_dim();
  const int p = instance.noise_dim();
  if (n < 1 || m < 1 || p < 1) {
    add(ValidationIssueKind::DimensionMismatch, 0, "empty system matrices");
    return err;
  }

  for (int k = 0; k < N; ++k) {
    const auto& s = instance.stages[k];
    const auto& c = instance.costs[k];
    if (s.A.rows() != n || s.A.cols() != n || s.B.rows() != n ||
        s.B.cols() != m || s.D.rows() != n || s.D.cols() != p) {
      add(ValidationIssueKind::DimensionMismatch, k, "system matrix shape");
      continue;
    }
    if (c.Q.rows() != n || c.Q.cols() != n || c.R.rows() != m ||
        c.R.cols() != m) {
      add(ValidationIssueKind::DimensionMismatch, k, "cost matrix shape");
      continue;
    }
    if (relative_min_singular_value(s.A) <= kRankTol) {
      add(ValidationIssueKind::SingularTransition, k, "A");
    }
    if (!is_positive_semidefinite(c.Q, kPsdTol)) {
      add(ValidationIssueKind::NotPositiveDefinite, k, "Q");
    }
    if (!is_positive_definite(c.R, kPdFloor)) {
      add(ValidationIssueKind::NotPositiveDefinite, k, "R");
    }
  }

  const auto& bc = instance.boundary;
  if (bc.Sigma0.rows() != n || bc.Sigma0.cols() != n || bc.SigmaN.rows() != n ||
      bc.SigmaN.cols() != n) {
    add(ValidationIssueKind::DimensionMismatch, -1, "boundary covariance shape");
  } else {
    if (!is_positive_definite(bc.Sigma0, kPdFloor)) {
      add(ValidationIssueKind::NotPositiveDefinite, -1, "Sigma0");
    }
    if (!is_positive_definite(bc.SigmaN, kPdFloor)) {
      add(ValidationIssueKind::NotPositiveDefinite, -1, "SigmaN");
    }
    const auto& DN = instance.stages[N - 1].D;
    if (DN.rows() == n &&
        !is_positive_definite(bc.SigmaN - DN * DN.transpose(), kPdFloor)) {
      add(ValidationIssueKind::TerminalNoiseDominance, N - 1,
          "SigmaN - D D' is not positive definite");
    }
  }

  if (!err.issues.empty()) return err;
  return ValidatedProblem(instance);
}

inline ValidatedProblem validate_or_throw(const ProblemInstance& instance) {
  auto result = validate(instance);
  if (auto* err = std::get_if<ValidationError>(&result)) {
    throw Error(err->message());
  }
  return std::get<ValidatedProblem>(std::move(result));
}

/// The double-integrator benchmark used throughout: time-invariant stages
/// replicated over the horizon, with the norm chance constraint
/// (u_max = 10, gamma = 0.03) attached when requested.
inline ProblemInstance example_problem(int horizon, bool with_chance) {
  if (horizon < 1) throw Error("example_problem: horizon must be >= 1");
  ProblemInstance inst;
  inst.horizon = horizon;
  if (!with_chance && horizon == 8) {
    inst.label = "paper8nc";
  } else if (with_chance && horizon == 29) {
    inst.label = "paper29";
  } else {
    inst.label = "builtin" + std::to_string(horizon) +
                 (with_chance ? "" : "nc");
  }

  StageDynamics stage;
  stage.A = (Matrix(2, 2) << 1.0, 0.2, 0.0, 1.0).finished();
  stage.B = (Matrix(2, 1) << 0.02, 0.2).finished();
  stage.D = (Matrix(2, 2) << 0.4, 0.0, 0.4, 0.6).finished();

  StageCost cost;
  cost.Q = 0.5 * Matrix::Identity(2, 2);
  cost.R = Matrix::Constant(1, 1, 1.0);

  inst.stages.assign(horizon, stage);
  inst.costs.assign(horizon, cost);
  inst.boundary.Sigma0 = (Matrix(2, 2) << 5.0, -1.0, -1.0, 1.0).finished();
  inst.boundary.SigmaN = (Matrix(2, 2) << 0.5, -0.4, -0.4, 2.0).finished();
  if (with_chance) inst.chance = ChanceConstraintSpec{10.0, 0.03};
  return inst;
}

}  // namespace covsteer
