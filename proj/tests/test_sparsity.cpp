#include <catch_amalgamated.hpp>

#include <bit>
#include <cmath>

#include "covsteer/sparsity.hpp"
#include "test_support.hpp"

using namespace covsteer;

namespace {

Matrix scalar_mat(double v) { return Matrix::Constant(1, 1, v); }

std::vector<ParetoPoint> as_points(
    std::initializer_list<std::pair<int, double>> pairs) {
  std::vector<ParetoPoint> out;
  for (const auto& [jt, js] : pairs) {
    ParetoPoint p;
    p.j_tau = jt;
    p.j_sigma = js;
    p.provenance = Irl1pProvenance{};
    out.push_back(p);
  }
  return out;
}

bool same_front(const ParetoFront& a, const ParetoFront& b) {
  if (a.points.size() != b.points.size()) return false;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.points[i].j_tau != b.points[i].j_tau) return false;
    if (a.points[i].j_sigma != b.points[i].j_sigma) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("activity counting is strict and optionally relative") {
  const std::vector<Matrix> Y = {scalar_mat(1e-7), scalar_mat(-1e-5),
                                 scalar_mat(0.5), scalar_mat(1e-6)};
  CHECK(count_active(Y) == 2);  // the exact-threshold entry does not count

  SparsityThreshold rel;
  rel.value = 0.1;
  rel.relative = true;
  const std::vector<Matrix> Y2 = {scalar_mat(0.5), scalar_mat(0.04),
                                  scalar_mat(1e-8)};
  CHECK(count_active(Y2, rel) == 1);

  SdpSolution sol;
  sol.Y = Y;
  CHECK(count_active(sol) == 2);

  SparsityThreshold bad;
  bad.value = 0.0;
  CHECK_THROWS_AS(count_active(Y, bad), InvalidThreshold);
  bad.value = -1.0;
  CHECK_THROWS_AS(count_active(Y, bad), InvalidThreshold);
}

TEST_CASE("dominance filtering keeps an antitone frontier") {
  const auto in = as_points({{2, 10.0}, {3, 5.0}, {4, 12.0}, {1, 10.0}});
  const ParetoFront front = pareto_filter(in);
  // (4,12) loses to (3,5); (2,10) loses to the equal-cost sparser (1,10).
  REQUIRE(front.points.size() == 2);
  CHECK(front.points[0].j_tau == 1);
  CHECK(front.points[0].j_sigma == 10.0);
  CHECK(front.points[1].j_tau == 3);
  CHECK(front.points[1].j_sigma == 5.0);

  CHECK(front.at_level(3) != nullptr);
  CHECK(front.at_level(2) == nullptr);
}

TEST_CASE("exact duplicates keep the earliest point") {
  std::vector<ParetoPoint> in = as_points({{3, 5.0}, {3, 5.0}});
  in[0].provenance = Irl1pProvenance{25.0, 7, Irl1pTermination::Converged};
  in[1].provenance = Irl1pProvenance{50.0, 9, Irl1pTermination::Converged};
  const ParetoFront front = pareto_filter(in);
  REQUIRE(front.points.size() == 1);
  CHECK(std::get<Irl1pProvenance>(front.points[0].provenance).lambda == 25.0);
}

TEST_CASE("non-finite and infeasible entries never survive") {
  auto in = as_points({{2, 10.0}});
  ParetoPoint nan_point;
  nan_point.j_tau = 1;  // would dominate if it were usable
  in.push_back(nan_point);
  ParetoPoint marked = in[0];
  marked.j_tau = 0;
  marked.feasible = false;
  in.push_back(marked);
  const ParetoFront front = pareto_filter(in);
  REQUIRE(front.points.size() == 1);
  CHECK(front.points[0].j_tau == 2);
}

TEST_CASE("the filter is idempotent on random inputs") {
  GaussianStream g(31, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ParetoPoint> in;
    const int count = 3 + trial % 10;
    for (int i = 0; i < count; ++i) {
      ParetoPoint p;
      p.j_tau = static_cast<int>(std::abs(g.next()) * 3.0) % 6;
      // Coarse grid of costs forces frequent exact ties.
      p.j_sigma = 1.0 + static_cast<int>(std::abs(g.next()) * 4.0) % 5;
      p.feasible = g.next() < 1.5;  // occasionally infeasible
      p.provenance = Irl1pProvenance{};
      in.push_back(p);
    }
    const ParetoFront once = pareto_filter(in);
    const ParetoFront twice = pareto_filter(once.points);
    CHECK(same_front(once, twice));
    for (std::size_t i = 1; i < once.points.size(); ++i) {
      CHECK(once.points[i].j_tau > once.points[i - 1].j_tau);
      CHECK(once.points[i].j_sigma < once.points[i - 1].j_sigma);
    }
  }
}

TEST_CASE("mask bitstrings read stage order left to right") {
  CHECK(mask_bitstring({true, false, true, true}) == "1011");
  CHECK(mask_bitstring({}) == "");
}

TEST_CASE("exhaustive enumeration is capped by configuration") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(17, false));
  InteriorPointBackend backend;
  try {
    brute_force_pareto(problem, backend);
    FAIL("expected HorizonTooLarge");
  } catch (const HorizonTooLarge& e) {
    CHECK(e.horizon == 17);
    CHECK(e.cap == 16);
  }

  const ValidatedProblem small =
      validate_or_throw(example_problem(4, false));
  BruteForceOptions opts;
  opts.horizon_cap = 3;
  CHECK_THROWS_AS(brute_force_pareto(small, backend, {}, opts),
                  HorizonTooLarge);
  opts.horizon_cap = 0;
  CHECK_THROWS_AS(brute_force_pareto(small, backend, {}, opts),
                  InvalidConfig);
}

TEST_CASE("exhaustive fronts are worker-count invariant") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(4, false));
  InteriorPointBackend backend;

  const ParetoFront serial = brute_force_pareto(problem, backend);
  BruteForceOptions two;
  two.workers = 2;
  const ParetoFront threaded = brute_force_pareto(problem, backend, {}, two);

  REQUIRE(serial.points.size() == threaded.points.size());
  for (std::size_t i = 0; i < serial.points.size(); ++i) {
    CHECK(serial.points[i].j_tau == threaded.points[i].j_tau);
    CHECK(serial.points[i].j_sigma == threaded.points[i].j_sigma);
    const auto& ma = std::get<BruteForceProvenance>(serial.points[i].provenance);
    const auto& mb =
        std::get<BruteForceProvenance>(threaded.points[i].provenance);
    CHECK(ma.active == mb.active);
  }
  CHECK(serial.infeasible_levels == threaded.infeasible_levels);
  CHECK(serial.numerical_failures.empty());

  // The all-stages level coincides with the unrestricted program.
  const ParetoPoint* full = serial.at_level(4);
  if (full != nullptr) {
    const SdpSolution standard = solve(build_standard(problem), backend);
    REQUIRE(standard.status == SdpStatus::Optimal);
    CHECK(std::abs(full->j_sigma - standard.objective) <=
          1e-9 * standard.objective);
    const auto& mask = std::get<BruteForceProvenance>(full->provenance);
    CHECK(static_cast<int>(mask.active.size()) == 4);
    CHECK(std::count(mask.active.begin(), mask.active.end(), true) == 4);
  }
  // Every surviving point allows exactly j_tau stages.
  for (const ParetoPoint& p : serial.points) {
    const auto& mask = std::get<BruteForceProvenance>(p.provenance);
    CHECK(std::count(mask.active.begin(), mask.active.end(), true) == p.j_tau);
  }
}

TEST_CASE("lambda sweeps preserve order and tolerate failed runs") {
  const ValidatedProblem problem =
      validate_or_throw(example_problem(8, false));
  InteriorPointBackend backend;
  Irl1pConfig config;
  config.eps_conv = 2e-6;

  CHECK_THROWS_AS(lambda_sweep(problem, {}, config, backend), InvalidConfig);
  CHECK_THROWS_AS(lambda_sweep(problem, {1.0, -2.0}, config, backend),
                  NegativeLambda);

  const std::vector<ParetoPoint> points =
      lambda_sweep(problem, {0.0, 150.0}, config, backend);
  REQUIRE(points.size() == 2);
  CHECK(points[0].j_tau == 8);
  CHECK(points[1].j_tau == 3);
  CHECK(points[0].j_sigma < points[1].j_sigma);
  for (const ParetoPoint& p : points) {
    CHECK(p.feasible);
    const auto& prov = std::get<Irl1pProvenance>(p.provenance);
    CHECK(prov.termination == Irl1pTermination::Converged);
    CHECK(prov.iterations >= 2);
  }
  CHECK(std::get<Irl1pProvenance>(points[1].provenance).lambda == 150.0);

  // A problem no subproblem can solve yields placeholders, not an abort.
  ProblemInstance inst = example_problem(8, false);
  const Matrix D = inst.stages[7].D;
  inst.boundary.SigmaN =
      Matrix(D * D.transpose()) + 0.05 * Matrix::Identity(2, 2);
  const std::vector<ParetoPoint> failed = lambda_sweep(
      validate_or_throw(inst), {1.0, 2.0}, config, backend);
  REQUIRE(failed.size() == 2);
  for (const ParetoPoint& p : failed) {
    CHECK_FALSE(p.feasible);
    CHECK(std::isnan(p.j_sigma));
    CHECK(std::get<Irl1pProvenance>(p.provenance).iterations == 0);
  }
}

TEST_CASE("csv layouts are stable") {
  ParetoFront front;
  ParetoPoint p;
  p.j_tau = 2;
  p.j_sigma = 6552.0986723887327;
  p.provenance = BruteForceProvenance{{false, true, false, true}};
  front.points.push_back(p);
  front.infeasible_levels = {0, 1};
  CHECK(pareto_csv(front) ==
        "j_tau,j_sigma,provenance,detail,feasible\n"
        "2,6552.0986723887327,bruteforce,0101,1\n"
        "0,inf,bruteforce,,0\n"
        "1,inf,bruteforce,,0\n");

  ParetoPoint q;
  q.j_tau = 3;
  q.j_sigma = 754.79336376679271;
  q.provenance = Irl1pProvenance{150.0, 35, Irl1pTermination::Converged};
  CHECK(sweep_csv({q}) ==
        "j_tau,j_sigma,provenance,detail,feasible\n"
        "3,754.79336376679271,irl1p,150,1\n");
}
