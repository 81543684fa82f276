#include <cmath>
#include <random>

#include "dense_oracle.hpp"
#include "doctest.h"
#include "dfm/assembly.hpp"
#include "dfm/error.hpp"
#include "dfm/manufactured.hpp"
#include "dfm/solver.hpp"

using namespace dfm;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// Fracture from bottom to top (Dirichlet end, Neumann end), a barrier cutting it, and an
// immersed diagonal fracture.
Mesh mixed_mesh(DiagonalPattern pattern = DiagonalPattern::Forward) {
  StructuredGridSpec g;
  g.nx = g.ny = 4;
  g.pattern = pattern;
  std::vector<FractureSegmentSpec> f{
      {{0.25, 0.0}, {0.25, 1.0}, FeatureKind::Conductive, 1e-2, 50.0},
      {{0.0, 0.5}, {0.5, 0.5}, FeatureKind::Blocking, 1e-2, 0.3},
      {{0.5, 0.5}, {0.75, 0.75}, FeatureKind::Conductive, 2e-2, 20.0},
  };
  if (pattern != DiagonalPattern::Forward) f.pop_back();
  return generate_structured(g, f, {{BoundarySide::Top, EdgeClass::Neumann}});
}

ProblemSpec polynomial_spec(Scheme scheme) {
  ProblemSpec s;
  s.scheme = scheme;
  s.alpha0 = 7.0;
  s.alpha_tilde0 = 13.0;
  s.permeability = [](Point x, int) { return Tensor2{2.0 + x.x, 0.3, 0.3, 1.0 + x.y}; };
  s.source = [](Point x, Point) { return 1.0 + x.x * x.y; };
  s.fracture_source = [](Point x, Point) { return 0.5 - x.y; };
  s.dirichlet = [](Point x, Point) { return x.x * x.x - 2.0 * x.y + 0.25; };
  s.neumann = [](Point x, Point) { return 0.7 * x.x; };
  return s;
}

void check_against_oracle(const DGSpace& space, const ProblemSpec& spec, const Coefficients& coeffs,
                          const oracle::Mobility& mob) {
  const SparseSystem sys = assemble(space, spec, coeffs);
  const oracle::Dense ref = oracle::dense_forms(space, spec, mob);
  const Eigen::MatrixXd A = Eigen::MatrixXd(sys.matrix);
  const double scale = max_abs(ref.A);
  CHECK(max_abs(A - ref.A) <= 1e-12 * scale);
  CHECK((sys.rhs - ref.b).cwiseAbs().maxCoeff() <= 1e-12 * ref.b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("assembly matches the dense oracle entrywise") {
  for (auto pattern : {DiagonalPattern::Forward, DiagonalPattern::Alternating}) {
    const Mesh mesh = mixed_mesh(pattern);
    REQUIRE(mesh.num_cells() <= 32);
    for (int k = 1; k <= 2; ++k) {
      const DGSpace space(mesh, k);
      for (Scheme scheme : {Scheme::Sipg, Scheme::Nipg, Scheme::Iipg}) {
        CAPTURE(k);
        CAPTURE(to_string(scheme));
        const ProblemSpec spec = polynomial_spec(scheme);
        check_against_oracle(space, spec, {}, {});

        // Mobility weights, linear in x so both quadratures stay exact.
        Coefficients c;
        c.cell = [](std::size_t cell, Point x) { return 1.0 + 0.5 * x.x + 0.25 * x.y + 0.01 * double(cell); };
        c.dirichlet_edge = [](std::size_t, Point x) { return 2.0 + x.x; };
        c.dirichlet_vertex = [&mesh](std::size_t r, int) {
          return 3.0 + mesh.vertices()[mesh.fracture_vertices()[r].vertex].y;
        };
        oracle::Mobility mob;
        mob.cell = c.cell;
        mob.boundary = [](std::size_t, Point x, Point, bool vertex) {
          return vertex ? 3.0 + x.y : 2.0 + x.x;
        };
        check_against_oracle(space, spec, c, mob);
      }
    }
  }
}

TEST_CASE("oracle sees the same fracture vertices as the mesh") {
  const Mesh mesh = mixed_mesh();
  std::size_t interior = mesh.count(FractureVertexClass::Interior);
  std::size_t dirichlet = mesh.count(FractureVertexClass::Dirichlet);
  std::size_t i = 0, d = 0;
  for (const auto& v : oracle::fracture_vertices(mesh)) (v.interior ? i : d)++;
  CHECK(i == interior);
  CHECK(d == dirichlet);
  CHECK(interior > 0);
  CHECK(dirichlet == 1);
}

TEST_CASE("SIPG matrix is symmetric and positive definite") {
  for (auto c : {ManufacturedCase::Fracture, ManufacturedCase::Barrier}) {
    const auto m = manufactured(c);
    const Mesh mesh = generate_structured(8, m.features);
    for (int k = 1; k <= 3; ++k) {
      const DGSpace space(mesh, k);
      const SparseSystem sys = assemble(space, manufactured_problem(m));
      CHECK(sys.symmetric);
      const SparseMatrix diff = SparseMatrix(sys.matrix.transpose()) - sys.matrix;
      double dmax = 0.0, amax = 0.0;
      for (Eigen::Index i = 0; i < diff.nonZeros(); ++i) dmax = std::max(dmax, std::abs(diff.valuePtr()[i]));
      for (Eigen::Index i = 0; i < sys.matrix.nonZeros(); ++i) amax = std::max(amax, std::abs(sys.matrix.valuePtr()[i]));
      CHECK(dmax <= 1e-12 * amax);
      DirectSolver direct;
      direct.factorize(sys.matrix, true);
      CHECK(direct.cholesky());
    }
  }
}

TEST_CASE("penalty-only parts are positive semidefinite") {
  const Mesh mesh = mixed_mesh();
  std::mt19937 rng(7);
  std::normal_distribution<double> nd;
  for (Scheme scheme : {Scheme::Nipg, Scheme::Iipg}) {
    const DGSpace space(mesh, 2);
    AssemblyOptions opt;
    opt.parts.consistency = false;
    const SparseSystem sys = assemble(space, polynomial_spec(scheme), {}, opt);
    for (int t = 0; t < 100; ++t) {
      Eigen::VectorXd x(space.n_dofs());
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = nd(rng);
      CHECK(x.dot(sys.matrix * x) >= -1e-12 * x.squaredNorm());
    }
  }
}

TEST_CASE("penalty formulas") {
  CHECK(edge_penalty(10.0, 2, 1.0 / 16) == doctest::Approx(640.0).epsilon(1e-15));
  const auto m = manufactured(ManufacturedCase::Fracture);
  const Mesh mesh = generate_structured(16, m.features);
  bool seen = false;
  for (const auto& rec : mesh.fracture_vertices()) {
    if (const auto* ic = std::get_if<InteriorCoupling>(&rec.coupling)) {
      CHECK(edge_penalty(10.0, 1, ic->h_star) == doctest::Approx(160.0).epsilon(1e-12));
      seen = true;
    }
  }
  CHECK(seen);
}

TEST_CASE("single-cell P1 stiffness is the linear FEM stiffness in another basis") {
  const std::vector<Point> v{{0.1, 0.2}, {1.3, 0.4}, {0.5, 1.1}};
  const Mesh mesh = Mesh::build(v, {{0, 1, 2}}, {}, {});
  const DGSpace space(mesh, 1);
  const SparseSystem sys = assemble_bulk(space, ProblemSpec{});
  // Hat gradients of the triangle.
  const double twice = cross(v[1] - v[0], v[2] - v[0]);
  Eigen::Matrix3d S;
  std::array<Point, 3> g;
  for (int a = 0; a < 3; ++a) {
    const Point e = v[(a + 2) % 3] - v[(a + 1) % 3];
    g[a] = Point{-e.y, e.x} * (1.0 / twice);
  }
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) S(a, b) = 0.5 * twice * dot(g[a], g[b]);
  Eigen::Matrix3d C;  // C(a, i) = modal i at vertex a
  for (int a = 0; a < 3; ++a) {
    double val[3];
    space.eval_basis(0, v[a], val);
    for (int i = 0; i < 3; ++i) C(a, i) = val[i];
  }
  const Eigen::Matrix3d expected = C.transpose() * S * C;
  CHECK((Eigen::MatrixXd(sys.matrix) - expected).cwiseAbs().maxCoeff() <= 1e-13 * expected.cwiseAbs().maxCoeff());
  CHECK(sys.rhs.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("linearity in the coefficients") {
  const Mesh mesh = mixed_mesh();
  const DGSpace space(mesh, 2);
  ProblemSpec one, two;
  two.permeability = [](Point, int) { return Tensor2::identity(2.0); };
  const Eigen::MatrixXd b1 = Eigen::MatrixXd(assemble_bulk(space, one).matrix);
  const Eigen::MatrixXd b2 = Eigen::MatrixXd(assemble_bulk(space, two).matrix);
  CHECK(max_abs(b2 - 2.0 * b1) == 0.0);

  std::vector<FractureSegmentSpec> f = mesh.features();
  const Eigen::MatrixXd r1 = Eigen::MatrixXd(assemble_barrier(space, one).matrix);
  f[1].permeability *= 2.0;
  const Mesh doubled = generate_structured(
      StructuredGridSpec{4, 4}, f, {{BoundarySide::Top, EdgeClass::Neumann}});
  const DGSpace space2(doubled, 2);
  const Eigen::MatrixXd r2 = Eigen::MatrixXd(assemble_barrier(space2, one).matrix);
  CHECK(max_abs(r2 - 2.0 * r1) <= 1e-14 * max_abs(r1));
}

TEST_CASE("barrier block with k_b = a is the jump mass matrix") {
  const Mesh mesh = generate_structured(
      2, {{{0.5, 0.0}, {0.5, 1.0}, FeatureKind::Blocking, 1e-4, 1e-4}});
  const DGSpace space(mesh, 1);
  const Eigen::MatrixXd B = Eigen::MatrixXd(assemble_barrier(space, ProblemSpec{}).matrix);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(space.n_dofs(), space.n_dofs());
  const LineRule line = gauss_legendre(4);
  for (const Edge& e : mesh.edges()) {
    if (e.cls != EdgeClass::Barrier) continue;
    const Point a = mesh.vertices()[e.vertices[0]], b = mesh.vertices()[e.vertices[1]];
    for (std::size_t q = 0; q < line.size(); ++q) {
      const Point x = a + line.points[q] * (b - a);
      const auto g0 = oracle::global(space, e.cells[0], x);
      const auto g1 = oracle::global(space, e.cells[1], x);
      const Eigen::VectorXd j = g0.v - g1.v;
      M += line.weights[q] * e.length * j * j.transpose();
    }
  }
  CHECK(max_abs(B - M) <= 1e-14 * max_abs(M));
  // Continuous field: zero barrier energy.
  const DGField p = project(space, [](Point x, Point) { return 1.0 + x.x - 3.0 * x.y; });
  CHECK(std::abs(p.coeffs().dot(B * p.coeffs())) <= 1e-13);
}

TEST_CASE("jump terms vanish on continuous fields") {
  const Mesh mesh = mixed_mesh();
  for (int k = 1; k <= 3; ++k) {
    const DGSpace space(mesh, k);
    const ScalarFn poly = [k](Point x, Point) { return std::pow(x.x, k) - 2.0 * x.x * std::pow(x.y, k - 1) + 0.5; };
    const DGField p = project(space, poly);
    ProblemSpec spec;
    spec.dirichlet = poly;
    AssemblyOptions penalty_only;
    penalty_only.parts = {false, true, false, false, false};
    const SparseSystem faces = assemble(space, spec, {}, penalty_only);
    CHECK((faces.matrix * p.coeffs() - faces.rhs).cwiseAbs().maxCoeff() <= 1e-11);

    // σ terms: SIPG and NIPG differ only by 2σ⟨[[p]],{K∇ξ}⟩ and the matching loads.
    AssemblyOptions face_opt;
    face_opt.parts = {false, true, false, true, true};
    ProblemSpec nipg = spec;
    nipg.scheme = Scheme::Nipg;
    const SparseSystem s1 = assemble(space, spec, {}, face_opt);
    const SparseSystem s2 = assemble(space, nipg, {}, face_opt);
    const Eigen::VectorXd d = (s1.matrix - s2.matrix) * p.coeffs() - (s1.rhs - s2.rhs);
    CHECK(d.cwiseAbs().maxCoeff() <= 1e-10);

    const DGNormParts parts = dg_norm_parts(
        space, spec, [&](std::size_t c, Point x) { return p.value_unchecked(c, x) - poly(x, x); },
        [&](std::size_t c, Point x) { return p.gradient_unchecked(c, x); });
    CHECK(parts.jump <= 1e-22);
    CHECK(parts.barrier <= 1e-22);
    CHECK(parts.vertex_minus <= 1e-22);
    CHECK(parts.vertex_plus <= 1e-22);
  }
}

TEST_CASE("DG norm") {
  const Mesh mesh = mixed_mesh();
  const DGSpace space(mesh, 4);
  const ProblemSpec spec;
  CHECK(dg_norm(DGField(space), spec) == 0.0);
  // Smooth field with zero boundary trace: only gradient and tangential terms survive.
  const DGField p = project(space, [](Point x, Point) { return x.x * (1 - x.x) * x.y * (1 - x.y); });
  const DGNormParts parts = dg_norm_parts(
      space, spec, [&](std::size_t c, Point x) { return p.value_unchecked(c, x); },
      [&](std::size_t c, Point x) { return p.gradient_unchecked(c, x); });
  CHECK(parts.gradient > 0.0);
  CHECK(parts.tangential_minus > 0.0);
  CHECK(parts.tangential_minus == doctest::Approx(parts.tangential_plus).epsilon(1e-12));
  CHECK(parts.jump <= 1e-24);
  CHECK(parts.total() == doctest::Approx(std::sqrt(parts.gradient + parts.tangential_minus +
                                                   parts.tangential_plus + parts.jump +
                                                   parts.barrier + parts.vertex_minus + parts.vertex_plus)));
}

TEST_CASE("consistency residual decreases under refinement") {
  for (auto c : {ManufacturedCase::Fracture, ManufacturedCase::Barrier}) {
    const auto m = manufactured(c);
    const ProblemSpec spec = manufactured_problem(m);
    for (int k = 1; k <= 2; ++k) {
      double prev = INFINITY;
      for (int n : {4, 8, 16}) {
        const Mesh mesh = generate_structured(n, m.features);
        const double r = residual_check(DGSpace(mesh, k), spec, m.exact);
        CHECK(r < prev);
        prev = r;
      }
    }
  }
}

TEST_CASE("assembly is identical for any thread count") {
  const auto m = manufactured(ManufacturedCase::Fracture);
  const Mesh mesh = generate_structured(16, m.features);
  const DGSpace space(mesh, 2);
  const ProblemSpec spec = manufactured_problem(m);
  const SparseSystem one = assemble(space, spec);
  for (unsigned t : {2u, 3u, 8u}) {
    AssemblyOptions opt;
    opt.threads = t;
    const SparseSystem many = assemble(space, spec, {}, opt);
    REQUIRE(many.matrix.nonZeros() == one.matrix.nonZeros());
    bool same = true;
    for (Eigen::Index i = 0; i < one.matrix.nonZeros(); ++i) same &= one.matrix.valuePtr()[i] == many.matrix.valuePtr()[i];
    CHECK(same);
    CHECK((one.rhs - many.rhs).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("patch tests") {
  SolverConfig direct;
  direct.method = SolverMethod::Direct;
  auto check_exact = [&](const Mesh& mesh, const ScalarFn& exact) {
    const DGSpace space(mesh, 1);
    ProblemSpec spec;
    spec.dirichlet = exact;
    const SolveResult r = solve(assemble(space, spec), direct);
    const DGField ref = project(space, exact);
    CHECK((r.x - ref.coeffs()).cwiseAbs().maxCoeff() <= 1e-10);
  };
  for (auto pattern : {DiagonalPattern::Forward, DiagonalPattern::Alternating}) {
    StructuredGridSpec g;
    g.nx = g.ny = 8;
    g.pattern = pattern;
    SUBCASE("no features") {
      check_exact(generate_structured(g, {}), [](Point x, Point) { return x.x + 2.0 * x.y; });
    }
    SUBCASE("barrier") {
      const double a = 1e-2, kb = 0.5;
      const Mesh mesh = generate_structured(g, {{{0.5, 0.0}, {0.5, 1.0}, FeatureKind::Blocking, a, kb}});
      check_exact(mesh, [=](Point x, Point in) { return x.x + (in.x > 0.5 ? a / kb : 0.0); });
    }
    SUBCASE("fracture") {
      const Mesh mesh = generate_structured(g, {{{0.5, 0.0}, {0.5, 1.0}, FeatureKind::Conductive, 1e-4, 1e4}});
      check_exact(mesh, [](Point x, Point) { return x.y; });
    }
  }
}

TEST_CASE("assembly rejects piecewise constants") {
  const Mesh mesh = generate_structured(2, {});
  CHECK_THROWS_AS(assemble(DGSpace(mesh, 0), ProblemSpec{}), ConfigError);
  ProblemSpec bad;
  bad.alpha0 = 0.0;
  CHECK_THROWS_AS(assemble(DGSpace(mesh, 1), bad), ConfigError);
}
