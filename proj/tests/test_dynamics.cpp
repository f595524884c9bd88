#include <catch_amalgamated.hpp>

#include <cmath>

#include "covsteer/dynamics.hpp"
#include "test_support.hpp"

using namespace covsteer;
using testsupport::random_matrix;
using testsupport::random_spd;

TEST_CASE("propagation matches the closed-loop update formula") {
  GaussianStream g(11, 0);
  const Matrix Sigma = random_spd(g, 3, 0.2);
  const Matrix K = random_matrix(g, 2, 3, 0.5);
  StageDynamics stage;
  stage.A = random_matrix(g, 3, 3, 0.4);
  stage.B = random_matrix(g, 3, 2, 0.4);
  stage.D = random_matrix(g, 3, 2, 0.3);

  const Matrix closed = stage.A + stage.B * K;
  const Matrix expected =
      closed * Sigma * closed.transpose() + stage.D * stage.D.transpose();
  const Matrix got = propagate_covariance(Sigma, K, stage);
  CHECK((got - got.transpose()).norm() == 0.0);
  CHECK((got - expected).norm() <= 1e-12 * expected.norm());
}

TEST_CASE("propagated covariances never drop below the noise floor") {
  GaussianStream g(12, 0);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(std::abs(g.next())) % 3;
    const int m = 1 + static_cast<int>(std::abs(g.next())) % 2;
    const Matrix Sigma = random_spd(g, n, 1e-8);
    const Matrix K = random_matrix(g, m, n, 2.0);
    StageDynamics stage;
    stage.A = random_matrix(g, n, n, 1.0);
    stage.B = random_matrix(g, n, m, 1.0);
    stage.D = random_matrix(g, n, n, 0.5);
    const Matrix next = propagate_covariance(Sigma, K, stage);
    const Matrix floor = stage.D * stage.D.transpose();
    CHECK(min_eigenvalue(next - floor) >= -1e-10);
  }
}

TEST_CASE("propagation rejects bad inputs") {
  StageDynamics stage;
  stage.A = Matrix::Identity(2, 2);
  stage.B = Matrix::Ones(2, 1);
  stage.D = Matrix::Identity(2, 2);
  Matrix Sigma = Matrix::Identity(2, 2);
  Matrix K = Matrix::Zero(1, 2);

  Matrix bad = Sigma;
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(propagate_covariance(bad, K, stage), NonFiniteInput);
  CHECK_THROWS_AS(propagate_covariance(Sigma, Matrix::Zero(1, 3), stage),
                  DimensionMismatch);
  CHECK_THROWS_AS(propagate_covariance(Sigma, Matrix::Zero(2, 2), stage),
                  DimensionMismatch);
}

TEST_CASE("transient cost sums the stage traces") {
  CovarianceTrajectory traj;
  traj.covs = {2.0 * Matrix::Identity(2, 2), 3.0 * Matrix::Identity(2, 2),
               Matrix::Identity(2, 2)};
  FeedbackPolicy policy;
  policy.gains = {(Matrix(1, 2) << 1.0, 0.0).finished(),
                  (Matrix(1, 2) << 0.0, 2.0).finished()};
  std::vector<StageCost> costs(2);
  costs[0].Q = Matrix::Identity(2, 2);
  costs[0].R = Matrix::Constant(1, 1, 1.0);
  costs[1].Q = 0.5 * Matrix::Identity(2, 2);
  costs[1].R = Matrix::Constant(1, 1, 2.0);
  // Stage 0: tr(Q Σ) = 4, tr(R K Σ K') = 2. Stage 1: 3 + 2*4*3 = 27.
  CHECK(transient_cost(traj, policy, costs) == Catch::Approx(33.0));

  policy.gains.pop_back();
  CHECK_THROWS_AS(transient_cost(traj, policy, costs), DimensionMismatch);
}

TEST_CASE("gains recovered from U = K Sigma match the originals") {
  GaussianStream g(13, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 3;
    const int m = 1 + trial % 2;
    std::vector<Matrix> Sigma, U;
    std::vector<Matrix> K_true;
    for (int k = 0; k < 4; ++k) {
      Sigma.push_back(random_spd(g, n, 0.05));
      K_true.push_back(random_matrix(g, m, n, 1.0));
      U.push_back(K_true.back() * Sigma.back());
    }
    const FeedbackPolicy policy = recover_gains(U, Sigma);
    REQUIRE(policy.horizon() == 4);
    for (int k = 0; k < 4; ++k) {
      CHECK((policy.gains[k] - K_true[k]).norm() <=
            1e-10 * (1.0 + K_true[k].norm()));
    }
  }
}

TEST_CASE("gain recovery reports the singular stage") {
  std::vector<Matrix> Sigma = {Matrix::Identity(2, 2), Matrix::Zero(2, 2)};
  std::vector<Matrix> U = {Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
  try {
    recover_gains(U, Sigma);
    FAIL("expected SingularCovariance");
  } catch (const SingularCovariance& e) {
    CHECK(e.stage == 1);
  }
  CHECK_THROWS_AS(recover_gains(U, {Matrix::Identity(2, 2)}),
                  DimensionMismatch);
}

TEST_CASE("covariance rollout starts at Sigma0 and has N+1 entries") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(8, false));
  const FeedbackPolicy zero = FeedbackPolicy::zero(8, 1, 2);
  const CovarianceTrajectory traj = rollout_covariance(zero, problem);
  REQUIRE(traj.covs.size() == 9);
  CHECK(traj.covs[0] == problem.boundary().Sigma0);
  // One manual step: A Σ0 A' + DD' with K = 0.
  const auto& s = problem.stage(0);
  const Matrix step1 = s.A * problem.boundary().Sigma0 * s.A.transpose() +
                       s.D * s.D.transpose();
  CHECK((traj.covs[1] - step1).norm() <= 1e-13 * step1.norm());

  CHECK_THROWS_AS(rollout_covariance(FeedbackPolicy::zero(5, 1, 2), problem),
                  DimensionMismatch);
}

TEST_CASE("gaussian streams are deterministic and well scaled") {
  GaussianStream a(42, 7), b(42, 7), c(42, 8);
  bool identical = true, distinct = false;
  for (int i = 0; i < 64; ++i) {
    const double va = a.next();
    identical = identical && (va == b.next());
    distinct = distinct || (va != c.next());
  }
  CHECK(identical);
  CHECK(distinct);

  GaussianStream g(1234, 0);
  double sum = 0.0, sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = g.next();
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) <= 0.01);
  CHECK(std::abs(var - 1.0) <= 0.02);
}

TEST_CASE("monte carlo reports are identical across worker counts") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(8, false));
  FeedbackPolicy policy;
  GaussianStream g(14, 0);
  for (int k = 0; k < 8; ++k) policy.gains.push_back(random_matrix(g, 1, 2, 0.2));

  const MonteCarloReport serial =
      simulate_monte_carlo(policy, problem, 5000, 99, 1);
  const MonteCarloReport threaded =
      simulate_monte_carlo(policy, problem, 5000, 99, 3);
  REQUIRE(serial.violation_rates.size() == 8);
  CHECK(serial.terminal_covariance == threaded.terminal_covariance);
  CHECK(serial.violation_rates == threaded.violation_rates);

  const MonteCarloReport repeat =
      simulate_monte_carlo(policy, problem, 5000, 99, 1);
  CHECK(serial.terminal_covariance == repeat.terminal_covariance);

  // No input bound on this instance, so violations are vacuously zero.
  for (double rate : serial.violation_rates) CHECK(rate == 0.0);
}

TEST_CASE("sampled terminal covariance tracks the analytic rollout") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(6, false));
  const FeedbackPolicy zero = FeedbackPolicy::zero(6, 1, 2);
  const CovarianceTrajectory traj = rollout_covariance(zero, problem);
  const MonteCarloReport report =
      simulate_monte_carlo(zero, problem, 40000, 7, 2);
  const Matrix& expected = traj.covs.back();
  CHECK((report.terminal_covariance - expected).norm() <=
        0.05 * expected.norm());
}

TEST_CASE("monte carlo rejects malformed policies") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(4, false));
  CHECK_THROWS_AS(
      simulate_monte_carlo(FeedbackPolicy::zero(4, 2, 2), problem, 10, 1),
      DimensionMismatch);
  FeedbackPolicy nan_policy = FeedbackPolicy::zero(4, 1, 2);
  nan_policy.gains[2](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(simulate_monte_carlo(nan_policy, problem, 10, 1),
                  NonFiniteInput);
  CHECK_THROWS_AS(
      simulate_monte_carlo(FeedbackPolicy::zero(4, 1, 2), problem, 0, 1),
      Error);
}
