#include <catch_amalgamated.hpp>

#include <cmath>

#include "covsteer/ipm.hpp"
#include "test_support.hpp"

using namespace covsteer;
using testsupport::random_matrix;

namespace {

double eval(const LinExpr& e, const Vector& x) {
  double v = e.constant;
  for (const auto& [idx, coef] : e.terms) v += coef * x(idx);
  return v;
}

Matrix eval(const MatrixExpr& e, const Vector& x) {
  Matrix M(e.rows, e.cols);
  for (int i = 0; i < e.rows; ++i)
    for (int j = 0; j < e.cols; ++j) M(i, j) = eval(e(i, j), x);
  return M;
}

}  // namespace

TEST_CASE("svec and smat are inverse isometries") {
  GaussianStream g(21, 0);
  for (int d = 1; d <= 5; ++d) {
    const Matrix M = symmetrized(random_matrix(g, d, d, 1.0));
    const Vector v = svec(M);
    REQUIRE(v.size() == svec_dim(d));
    CHECK((smat(v) - M).norm() <= 1e-14 * (1.0 + M.norm()));
    CHECK(std::abs(v.squaredNorm() - M.squaredNorm()) <=
          1e-12 * (1.0 + M.squaredNorm()));
  }
}

TEST_CASE("linear expressions compress and combine") {
  LinExpr e(1.5);
  e.terms = {{3, 1.0}, {1, 2.0}, {3, 0.5}, {2, 1e-18}};
  e.compress(1e-12);
  REQUIRE(e.terms.size() == 2);
  CHECK(e.terms[0] == std::make_pair(1, 2.0));
  CHECK(e.terms[1] == std::make_pair(3, 1.5));

  LinExpr f(0.5);
  f.terms = {{1, -2.0}};
  LinExpr sum = e + f;
  sum.compress();
  Vector x(4);
  x << 0.0, 7.0, 0.0, 2.0;
  CHECK(eval(sum, x) == Catch::Approx(2.0 + 3.0));  // constants 2, 1.5 * x3
  CHECK(eval(3.0 * f, x) == Catch::Approx(3.0 * (0.5 - 14.0)));
  CHECK(eval(e - f, x) == Catch::Approx((1.5 + 14.0 + 3.0) - (0.5 - 14.0)));
}

TEST_CASE("program blocks pack symmetric values consistently") {
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 3);
  const int t = prog.add_scalar("t");
  CHECK(prog.packed_size() == 6 + 1);
  CHECK(prog.block(X).dim == 6);
  CHECK(prog.block(t).offset == 6);

  GaussianStream g(22, 0);
  const Matrix M = symmetrized(random_matrix(g, 3, 3, 1.0));
  Vector x(prog.packed_size());
  x.segment(0, 6) = svec(M);
  x(6) = 4.25;
  CHECK((prog.block_value(x, X) - M).norm() <= 1e-14);
  CHECK(prog.scalar_value(x, t) == 4.25);
  // Entry expressions undo the packed sqrt(2) scaling.
  const Matrix E = eval(prog.block_expr(X), x);
  CHECK((E - M).norm() <= 1e-14 * (1.0 + M.norm()));
  CHECK(eval(prog.scalar(t), x) == 4.25);

  CHECK_THROWS_AS(prog.entry(t, 0, 0), Error);
  CHECK_THROWS_AS(prog.scalar(X), Error);
  CHECK_THROWS_AS(prog.entry(X, 0, 3), DimensionMismatch);
  CHECK_THROWS_AS(prog.add_symmetric("bad", 0), Error);
}

TEST_CASE("constant matrix products act on expression grids") {
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  GaussianStream g(23, 0);
  const Matrix M = symmetrized(random_matrix(g, 2, 2, 1.0));
  const Matrix L = random_matrix(g, 3, 2, 1.0);
  const Matrix R = random_matrix(g, 2, 2, 1.0);
  Vector x = svec(M);

  const MatrixExpr expr = prog.block_expr(X);
  CHECK((eval(L * expr, x) - L * M).norm() <= 1e-13);
  CHECK((eval(expr * R, x) - M * R).norm() <= 1e-13);
  CHECK((eval((L * expr).transpose(), x) - (L * M).transpose()).norm() <=
        1e-13);
  CHECK_THROWS_AS(expr * Matrix::Identity(3, 3), DimensionMismatch);
}

TEST_CASE("matrix equalities pin a block entrywise") {
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  const Matrix T = (Matrix(2, 2) << 2.0, -0.7, -0.7, 1.3).finished();
  prog.add_matrix_equality(prog.block_expr(X), T, true);

  InteriorPointBackend backend;
  const BackendResult res = backend.solve(prog);
  REQUIRE(res.status == BackendStatus::Optimal);
  CHECK(res.message == "fully determined by presolve");
  CHECK((prog.block_value(res.x, X) - T).norm() <= 1e-12);
}

TEST_CASE("trace dominance problem solves to its unique optimizer") {
  // min tr X  s.t.  X - C psd; the unique optimum is X = C.
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  const Matrix C = (Matrix(2, 2) << 2.0, 1.0, 1.0, 1.0).finished();
  prog.add_psd(prog.block_expr(X) - MatrixExpr::constant(C));
  prog.add_objective_term(prog.entry(X, 0, 0));
  prog.add_objective_term(prog.entry(X, 1, 1));

  InteriorPointBackend backend;
  const BackendResult res = backend.solve(prog);
  REQUIRE(res.status == BackendStatus::Optimal);
  CHECK(res.objective == Catch::Approx(3.0).margin(1e-6));
  CHECK((prog.block_value(res.x, X) - C).norm() <= 1e-5);
  CHECK(res.iterations > 0);
}

TEST_CASE("minimum eigenvalue as a semidefinite program") {
  // min tr(C X)  s.t.  tr X = 1, X psd; optimum is the smallest eigenvalue.
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  const Matrix C = (Matrix(2, 2) << 2.0, 1.0, 1.0, 1.0).finished();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      prog.add_objective_term(C(i, j) * prog.entry(X, i, j));
    }
  }
  prog.add_equality(prog.entry(X, 0, 0) + prog.entry(X, 1, 1), 1.0);
  prog.add_psd(prog.block_expr(X));

  InteriorPointBackend backend;
  const BackendResult res = backend.solve(prog);
  REQUIRE(res.status == BackendStatus::Optimal);
  const double lam_min = (3.0 - std::sqrt(5.0)) / 2.0;
  CHECK(res.objective == Catch::Approx(lam_min).margin(1e-6));
  const Matrix Xv = prog.block_value(res.x, X);
  CHECK(std::abs(Xv.trace() - 1.0) <= 1e-6);
  CHECK(min_eigenvalue(Xv) >= -1e-7);
}

TEST_CASE("second-order cones enter through the arrow lift") {
  // min t  s.t.  t >= ||(3, 4)||; optimum 5.
  ConicProgram prog;
  const int t = prog.add_scalar("t");
  prog.add_objective_term(prog.scalar(t));
  prog.add_soc(prog.scalar(t), {LinExpr(3.0), LinExpr(4.0)});

  InteriorPointBackend backend;
  const BackendResult res = backend.solve(prog);
  REQUIRE(res.status == BackendStatus::Optimal);
  CHECK(res.objective == Catch::Approx(5.0).margin(1e-5));
  CHECK(prog.scalar_value(res.x, t) == Catch::Approx(5.0).margin(1e-5));
}

TEST_CASE("inconsistent trace bound yields an infeasibility certificate") {
  // X - I psd forces tr X >= 2, incompatible with tr X = 1.
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  prog.add_psd(prog.block_expr(X) -
               MatrixExpr::constant(Matrix::Identity(2, 2)));
  prog.add_equality(prog.entry(X, 0, 0) + prog.entry(X, 1, 1), 1.0);
  prog.add_objective_term(prog.entry(X, 0, 0));

  InteriorPointBackend backend;
  const BackendResult res = backend.solve(prog);
  CHECK(res.status == BackendStatus::PrimalInfeasible);
}

TEST_CASE("unbounded descent yields a dual infeasibility certificate") {
  // min -tr X  s.t.  X - I psd; X = s I drives the objective to -inf.
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  prog.add_psd(prog.block_expr(X) -
               MatrixExpr::constant(Matrix::Identity(2, 2)));
  prog.add_objective_term(-1.0 * prog.entry(X, 0, 0));
  prog.add_objective_term(-1.0 * prog.entry(X, 1, 1));

  InteriorPointBackend backend;
  const BackendResult res = backend.solve(prog);
  CHECK(res.status == BackendStatus::DualInfeasible);
}

TEST_CASE("presolve fixes variables and prunes forced-zero rows") {
  SECTION("conflicting fixings are infeasible before any cone work") {
    ConicProgram prog;
    const int a = prog.add_scalar("a");
    prog.add_equality(prog.scalar(a), 1.0);
    prog.add_equality(prog.scalar(a), 2.0);
    InteriorPointBackend backend;
    CHECK(backend.solve(prog).status == BackendStatus::PrimalInfeasible);
  }

  SECTION("an unconstrained direction in the objective is unbounded") {
    ConicProgram prog;
    const int a = prog.add_scalar("a");
    prog.add_objective_term(prog.scalar(a));
    InteriorPointBackend backend;
    CHECK(backend.solve(prog).status == BackendStatus::DualInfeasible);
  }

  SECTION("a zero diagonal forces its whole row to vanish") {
    // [[a, b], [b, 0]] psd forces b = 0, leaving min a s.t. a >= 0.
    ConicProgram prog;
    const int a = prog.add_scalar("a");
    const int b = prog.add_scalar("b");
    MatrixExpr F(2, 2);
    F(0, 0) = prog.scalar(a);
    F(0, 1) = prog.scalar(b);
    F(1, 0) = prog.scalar(b);
    F(1, 1) = LinExpr(0.0);
    prog.add_psd(F);
    prog.add_objective_term(prog.scalar(a));
    InteriorPointBackend backend;
    const BackendResult res = backend.solve(prog);
    REQUIRE(res.status == BackendStatus::Optimal);
    CHECK(std::abs(prog.scalar_value(res.x, b)) <= 1e-9);
    CHECK(std::abs(prog.scalar_value(res.x, a)) <= 1e-5);
  }
}

TEST_CASE("iteration cap is reported as such") {
  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  prog.add_psd(prog.block_expr(X) -
               MatrixExpr::constant(Matrix::Identity(2, 2)));
  prog.add_objective_term(prog.entry(X, 0, 0));
  prog.add_objective_term(prog.entry(X, 1, 1));

  SolverSettings st;
  st.max_iters = 0;
  InteriorPointBackend backend(st);
  const BackendResult res = backend.solve(prog);
  CHECK(res.status == BackendStatus::IterationLimit);
  CHECK(res.iterations == 0);
}

TEST_CASE("cloned backends are independent and keep their settings") {
  SolverSettings st;
  st.feastol = 1e-9;
  InteriorPointBackend backend(st);
  std::unique_ptr<SolverBackend> copy = backend.clone();
  REQUIRE(copy != nullptr);
  auto* typed = dynamic_cast<InteriorPointBackend*>(copy.get());
  REQUIRE(typed != nullptr);
  CHECK(typed->settings().feastol == 1e-9);

  ConicProgram prog;
  const int X = prog.add_symmetric("X", 2);
  prog.add_psd(prog.block_expr(X) -
               MatrixExpr::constant(Matrix::Identity(2, 2)));
  prog.add_objective_term(prog.entry(X, 0, 0));
  prog.add_objective_term(prog.entry(X, 1, 1));
  CHECK(copy->solve(prog).status == BackendStatus::Optimal);
}
