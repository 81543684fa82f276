#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dfm/error.hpp"
#include "dfm/manufactured.hpp"
#include "dfm/solver.hpp"

using namespace dfm;

namespace {

SparseSystem example_system(Scheme scheme, std::size_t n, int k) {
  const auto m = manufactured(ManufacturedCase::Fracture);
  const Mesh mesh = generate_structured(n, m.features);
  return assemble(DGSpace(mesh, k), manufactured_problem(m, scheme));
}

double relative_residual(const SparseSystem& s, const Eigen::VectorXd& x) {
  return (s.matrix * x - s.rhs).norm() / s.rhs.norm();
}

SolverConfig with(SolverMethod m, Preconditioner p = Preconditioner::Default) {
  SolverConfig c;
  c.method = m;
  c.preconditioner = p;
  return c;
}

}  // namespace

TEST_CASE("identity") {
  SparseSystem s;
  s.matrix.resize(2, 2);
  s.matrix.insert(0, 0) = 1.0;
  s.matrix.insert(1, 1) = 1.0;
  s.rhs = Eigen::Vector2d(1.0, 2.0);
  s.symmetric = true;
  for (auto m : {SolverMethod::Direct, SolverMethod::ConjugateGradient, SolverMethod::BiCGStab}) {
    const SolveResult r = solve(s, with(m));
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.x[1] == doctest::Approx(2.0).epsilon(1e-14));
  }
}

TEST_CASE("diagonal-preconditioned CG on the SIPG system") {
  const SparseSystem s = example_system(Scheme::Sipg, 16, 1);
  const SolveResult r = solve(s, with(SolverMethod::ConjugateGradient, Preconditioner::Diagonal));
  CHECK(r.report.method == "cg+diagonal");
  CHECK(r.report.residual <= 1e-12);
  CHECK(relative_residual(s, r.x) <= 2e-12);
  CHECK(r.report.history.size() == static_cast<std::size_t>(r.report.iterations) + 1);
  // Regression baseline for this mesh and ordering.
  CHECK(r.report.iterations >= 320);
  CHECK(r.report.iterations <= 390);
  MESSAGE("CG iterations: " << r.report.iterations);

  const SolveResult d = solve(s, with(SolverMethod::Direct));
  CHECK((r.x - d.x).norm() <= 1e-8 * d.x.norm());
  CHECK(d.report.cholesky);
}

TEST_CASE("BiCGStab on NIPG and IIPG systems agrees with the direct solve") {
  for (Scheme scheme : {Scheme::Nipg, Scheme::Iipg}) {
    const SparseSystem s = example_system(scheme, 8, 2);
    CHECK_FALSE(s.symmetric);
    const SolveResult d = solve(s, with(SolverMethod::Direct));
    CHECK_FALSE(d.report.cholesky);
    for (auto p : {Preconditioner::Default, Preconditioner::Diagonal, Preconditioner::ILU0}) {
      const SolveResult b = solve(s, with(SolverMethod::BiCGStab, p));
      CHECK(b.report.residual <= 1e-12);
      CHECK((b.x - d.x).norm() <= 1e-9 * d.x.norm());
    }
  }
}

TEST_CASE("auto picks the direct path below the limit") {
  const SparseSystem s = example_system(Scheme::Sipg, 4, 1);
  CHECK(solve(s).report.method == "cholesky");
  SolverConfig c;
  c.direct_limit = 10;
  CHECK(solve(s, c).report.method == "cg+diagonal");
  SparseSystem u = example_system(Scheme::Nipg, 4, 1);
  CHECK(solve(u, c).report.method == "bicgstab+ilu0");
  CHECK(solve(u).report.method == "lu");
}

TEST_CASE("solution is linear in the right-hand side") {
  SparseSystem s = example_system(Scheme::Sipg, 8, 2);
  const Eigen::VectorXd x1 = solve(s, with(SolverMethod::Direct)).x;
  s.rhs *= -3.5;
  const Eigen::VectorXd x2 = solve(s, with(SolverMethod::Direct)).x;
  CHECK((x2 + 3.5 * x1).norm() <= 1e-12 * x2.norm());
  const Eigen::VectorXd x3 = solve(s, with(SolverMethod::ConjugateGradient)).x;
  CHECK((x3 + 3.5 * x1).norm() <= 1e-8 * x3.norm());
}

TEST_CASE("CG is rejected on unsymmetric systems") {
  const SparseSystem s = example_system(Scheme::Nipg, 4, 1);
  CHECK_THROWS_AS(solve(s, with(SolverMethod::ConjugateGradient)), SolverError);
}

TEST_CASE("iteration limit reports the history") {
  const SparseSystem s = example_system(Scheme::Sipg, 8, 1);
  SolverConfig c = with(SolverMethod::ConjugateGradient, Preconditioner::None);
  c.max_iterations = 3;
  try {
    solve(s, c);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(std::string(e.what()).find("history") != std::string::npos);
  }
}

TEST_CASE("configuration validation") {
  SolverConfig c;
  c.tolerance = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.tolerance = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.tolerance = 1e-10;
  c.max_iterations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_solver_method("bicgstab") == SolverMethod::BiCGStab);
  CHECK(parse_preconditioner("ilu0") == Preconditioner::ILU0);
  CHECK_THROWS_AS(parse_solver_method("gmres"), ConfigError);
  CHECK_THROWS_AS(parse_preconditioner("amg"), ConfigError);
}

TEST_CASE("singular matrix fails explicitly") {
  SparseSystem s;
  s.matrix.resize(2, 2);
  s.matrix.insert(0, 0) = 1.0;
  s.matrix.insert(0, 1) = 1.0;
  s.matrix.insert(1, 0) = 1.0;
  s.matrix.insert(1, 1) = 1.0;
  s.rhs = Eigen::Vector2d(1.0, 2.0);
  s.symmetric = true;
  CHECK_THROWS_AS(solve(s, with(SolverMethod::Direct)), SolverError);
}

TEST_CASE("matrix market output") {
  SparseMatrix m(2, 3);
  m.insert(0, 0) = 1.5;
  m.insert(1, 2) = -2.0;
  std::istringstream in(to_matrix_market(m));
  std::string line;
  std::getline(in, line);
  CHECK(line == "%%MatrixMarket matrix coordinate real general");
  int r, c, nnz;
  in >> r >> c >> nnz;
  CHECK(r == 2);
  CHECK(c == 3);
  CHECK(nnz == 2);
  int i, j;
  double v;
  in >> i >> j >> v;
  CHECK(i == 1);
  CHECK(j == 1);
  CHECK(v == 1.5);
  in >> i >> j >> v;
  CHECK(i == 2);
  CHECK(j == 3);
  CHECK(v == -2.0);

  std::istringstream vin(to_matrix_market(Eigen::Vector2d(0.25, 3.0)));
  std::getline(vin, line);
  CHECK(line == "%%MatrixMarket matrix array real general");
  vin >> r >> c >> v;
  CHECK(r == 2);
  CHECK(c == 1);
  CHECK(v == 0.25);
}
