#pragma once

#include <algorithm>
#include <atomic>
#include <limits>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "covsteer/matrix_utils.hpp"
#include "covsteer/model.hpp"
#include "covsteer/rng.hpp"

namespace covsteer {

/// State feedback u_k = K_k x_k, one gain per stage.
struct FeedbackPolicy {
  std::vector<Matrix> gains;

  int horizon() const { return static_cast<int>(gains.size()); }

  static FeedbackPolicy zero(int N, int m, int n) {
    FeedbackPolicy p;
    p.gains.assign(N, Matrix::Zero(m, n));
    return p;
  }
};

/// Covariances Σ_0..Σ_N along a closed-loop run, each symmetric PSD.
struct CovarianceTrajectory {
  std::vector<Matrix> covs;

  int horizon() const { return static_cast<int>(covs.size()) - 1; }
};

struct MonteCarloReport {
  long long samples = 0;
  std::vector<double> violation_rates;  // per stage, fraction with ||u||>u_max
  Matrix terminal_covariance;
  std::uint64_t seed = 0;
};

struct SingularCovariance : Error {
  explicit SingularCovariance(int stage)
      : Error("covariance at stage " + std::to_string(stage) +
              " is numerically singular"),
        stage(stage) {}
  int stage;
};

/// One step of Σ' = (A+BK) Σ (A+BK)' + DD'. The result is explicitly
/// symmetrized; Σ' − DD' is PSD for any PSD input.
inline Matrix propagate_covariance(const Matrix& Sigma, const Matrix& K,
                                   const StageDynamics& stage) {
  if (!Sigma.allFinite() || !K.allFinite()) {
    throw NonFiniteInput("propagate_covariance");
  }
  if (Sigma.rows() != Sigma.cols() || K.cols() != Sigma.rows() ||
      stage.A.cols() != Sigma.rows() || stage.B.cols() != K.rows()) {
    throw DimensionMismatch("propagate_covariance: incompatible shapes");
  }
  const Matrix closed = stage.A + stage.B * K;
  return symmetrized(closed * Sigma * closed.transpose() +
                     stage.D * stage.D.transpose());
}

/// Transient cost sum_k tr(Q Σ_k) + tr(R K_k Σ_k K_k').
inline double transient_cost(const CovarianceTrajectory& trajectory,
                             const FeedbackPolicy& policy,
                             const std::vector<StageCost>& costs) {
  const int N = static_cast<int>(costs.size());
  if (policy.horizon() != N || trajectory.horizon() != N) {
    throw DimensionMismatch("transient_cost: horizon mismatch");
  }
  double total = 0.0;
  for (int k = 0; k < N; ++k) {
    const Matrix& Sigma = trajectory.covs[k];
    const Matrix& K = policy.gains[k];
    total += (costs[k].Q * Sigma).trace() +
             (costs[k].R * K * Sigma * K.transpose()).trace();
  }
  return total;
}

/// K_k = U_k Σ_k^{-1} via Cholesky of Σ_k. Σ uses stage indices 0..N-1 here;
/// the terminal Σ_N never enters a gain.
inline FeedbackPolicy recover_gains(const std::vector<Matrix>& U,
                                    const std::vector<Matrix>& Sigma) {
  const int N = static_cast<int>(U.size());
  if (static_cast<int>(Sigma.size()) < N) {
    throw DimensionMismatch("recover_gains: fewer covariances than inputs");
  }
  FeedbackPolicy policy;
  policy.gains.reserve(N);
  for (int k = 0; k < N; ++k) {
    Eigen::LLT<Matrix> llt(symmetrized(Sigma[k]));
    if (llt.info() != Eigen::Success) throw SingularCovariance(k);
    // Solve K Σ = U as Σ K' = U'.
    policy.gains.push_back(llt.solve(U[k].transpose()).transpose());
  }
  return policy;
}

inline CovarianceTrajectory rollout_covariance(const FeedbackPolicy& policy,
                                               const ValidatedProblem& problem) {
  const int N = problem.horizon();
  if (policy.horizon() != N) {
    throw DimensionMismatch("rollout_covariance: policy horizon mismatch");
  }
  CovarianceTrajectory traj;
  traj.covs.reserve(N + 1);
  traj.covs.push_back(symmetrized(problem.boundary().Sigma0));
  for (int k = 0; k < N; ++k) {
    traj.covs.push_back(
        propagate_covariance(traj.covs.back(), policy.gains[k],
                             problem.stage(k)));
  }
  return traj;
}

namespace detail {

/// Square root factor L with L L' = Sigma. Cholesky when PD; eigenvalue
/// clipping at zero keeps semi-definite boundary cases usable.
inline Matrix covariance_factor(const Matrix& Sigma) {
  Eigen::LLT<Matrix> llt(symmetrized(Sigma));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(Sigma));
  Vector clipped = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * clipped.cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Closed-loop sampling of x_{k+1} = A x_k + B K_k x_k + D w_k from
/// x_0 ~ N(0, Σ̄_0). Every sample draws from its own (seed, index) stream and
/// partial sums are reduced in fixed-size chunks, so the report is identical
/// for any worker count. Violation rates are vacuously zero when the problem
/// carries no input-norm bound.
inline MonteCarloReport simulate_monte_carlo(const FeedbackPolicy& policy,
                                             const ValidatedProblem& problem,
                                             long long n_samples,
                                             std::uint64_t seed,
                                             int n_workers = 1) {
  const int N = problem.horizon();
  const int n = problem.state_dim();
  const int p = problem.noise_dim();
  if (policy.horizon() != N) {
    throw DimensionMismatch("simulate_monte_carlo: policy horizon mismatch");
  }
  for (int k = 0; k < N; ++k) {
    if (policy.gains[k].rows() != problem.input_dim() ||
        policy.gains[k].cols() != n) {
      throw DimensionMismatch("simulate_monte_carlo: gain shape at stage " +
                              std::to_string(k));
    }
    if (!policy.gains[k].allFinite()) {
      throw NonFiniteInput("simulate_monte_carlo: gain at stage " +
                           std::to_string(k));
    }
  }
  if (n_samples < 1) throw Error("simulate_monte_carlo: n_samples must be >= 1");
  if (n_workers < 1) n_workers = 1;

  const double u_max = problem.chance()
                           ? problem.chance()->u_max
                           : std::numeric_limits<double>::infinity();
  const Matrix L0 = detail::covariance_factor(problem.boundary().Sigma0);

  constexpr long long kChunk = 1024;
  const long long n_chunks = (n_samples + kChunk - 1) / kChunk;

  struct ChunkSums {
    std::vector<long long> violations;  // per stage
    Matrix second_moment;               // sum of x_N x_N'
  };
  std::vector<ChunkSums> partials(static_cast<std::size_t>(n_chunks));

  std::atomic<long long> next_chunk{0};
  auto worker = [&]() {
    Vector x(n), w(p), z(n);
    for (;;) {
      const long long c = next_chunk.fetch_add(1);
      if (c >= n_chunks) break;
      ChunkSums sums;
      sums.violations.assign(N, 0);
      sums.second_moment = Matrix::Zero(n, n);
      const long long begin = c * kChunk;
      const long long end = std::min(n_samples, begin + kChunk);
      for (long long i = begin; i < end; ++i) {
        GaussianStream g(seed, static_cast<std::uint64_t>(i));
        for (int r = 0; r < n; ++r) z(r) = g.next();
        x = L0 * z;
        for (int k = 0; k < N; ++k) {
          const Vector u = policy.gains[k] * x;
          if (u.norm() > u_max) ++sums.violations[k];
          for (int r = 0; r < p; ++r) w(r) = g.next();
          const auto& s = problem.stage(k);
          x = s.A * x + s.B * u + s.D * w;
        }
        sums.second_moment.noalias() += x * x.transpose();
      }
      partials[static_cast<std::size_t>(c)] = std::move(sums);
    }
  };

  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  // Sequential reduction in chunk order keeps float sums worker-invariant.
  std::vector<long long> violations(N, 0);
  Matrix second_moment = Matrix::Zero(n, n);
  for (const auto& sums : partials) {
    for (int k = 0; k < N; ++k) violations[k] += sums.violations[k];
    second_moment += sums.second_moment;
  }

  MonteCarloReport report;
  report.samples = n_samples;
  report.seed = seed;
  report.violation_rates.resize(N);
  for (int k = 0; k < N; ++k) {
    report.violation_rates[k] =
        static_cast<double>(violations[k]) / static_cast<double>(n_samples);
  }
  // Means are identically zero by construction, so the second moment about
  // the origin is the covariance estimator.
  report.terminal_covariance =
      symmetrized(second_moment / static_cast<double>(n_samples));
  return report;
}

}  // namespace covsteer
