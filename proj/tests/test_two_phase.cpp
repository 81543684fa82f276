#include <cmath>
#include <random>
#include <sstream>

#include "two_phase_fixtures.hpp"
#include "doctest.h"
#include "dfm/error.hpp"
#include "dfm/two_phase.hpp"

using namespace dfm;
using namespace fixtures;

TEST_CASE("pressure, saturation and mass operators match the dense oracle") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 1);
  const TwoPhaseSpec spec = corey_spec();
  TwoPhaseSolver solver(space, spec);
  const DGField s(space, field(space, 0.03, 7));
  const DGField p(space, field(space, 0.5, 11));
  const Oracles o = make_oracles(space, spec, s, p);

  SUBCASE("pressure system") {
    ProblemSpec total = spec.pressure;
    total.source = add(spec.q_w, spec.q_n);
    total.fracture_source = add(spec.qf_w, spec.qf_n);
    const SparseSystem sys = solver.pressure_system(s.coeffs(), &p.coeffs());
    const oracle::Dense ref = oracle::dense_forms(space, total, o.total);
    CHECK(max_abs(Eigen::MatrixXd(sys.matrix) - ref.A) <= 1e-12 * max_abs(ref.A));
    CHECK((sys.rhs - ref.b).cwiseAbs().maxCoeff() <= 1e-12 * ref.b.cwiseAbs().maxCoeff());
  }

  SUBCASE("c_h + d_h and H_h + I_h") {
    ProblemSpec wetting = spec.pressure;
    wetting.source = spec.q_w;
    wetting.fracture_source = spec.qf_w;
    const SaturationOperator op = solver.saturation_operator(p.coeffs(), s.coeffs());
    const oracle::Dense ref = oracle::dense_forms(space, wetting, o.wetting);
    CHECK(max_abs(Eigen::MatrixXd(op.flux) - ref.A) <= 1e-12 * max_abs(ref.A));
    CHECK((op.flux_load - ref.b).cwiseAbs().maxCoeff() <= 1e-12 * ref.b.cwiseAbs().maxCoeff());
  }

  SUBCASE("β and β̃ jump penalties") {
    double beta = 0.0, beta_tilde = 0.0;
    for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
      beta = std::max(beta, norm(kK.apply(p.gradient_unchecked(c, oracle::centroid(mesh, c)))));
    }
    for (const Edge& e : mesh.edges()) {
      if (e.cls != EdgeClass::Fracture) continue;
      const auto& f = mesh.features()[e.feature];
      const Point nu = oracle::feature_tangent(mesh, e.feature);
      for (std::size_t c : e.cells) {
        const double d = dot(p.gradient_unchecked(c, oracle::centroid(mesh, c)), nu);
        beta_tilde = std::max(beta_tilde, std::abs(f.aperture * f.permeability * d));
      }
    }
    beta *= spec.beta0;
    beta_tilde *= spec.beta_tilde0;
    const SaturationOperator op = solver.saturation_operator(p.coeffs(), s.coeffs());
    CHECK(op.beta == doctest::Approx(beta).epsilon(1e-13));
    CHECK(op.beta_tilde == doctest::Approx(beta_tilde).epsilon(1e-13));
    const oracle::Dense ref = oracle::dense_penalty(space, beta, beta_tilde, o.inflow, spec.s_inflow);
    CHECK(max_abs(Eigen::MatrixXd(op.penalty) - ref.A) <= 1e-12 * max_abs(ref.A));
    CHECK(ref.b.cwiseAbs().maxCoeff() > 0.0);
    CHECK((op.penalty_load - ref.b).cwiseAbs().maxCoeff() <= 1e-12 * ref.b.cwiseAbs().maxCoeff());
  }

  SUBCASE("π_h") {
    const Eigen::MatrixXd ref = oracle::dense_mass(space, spec.phi_m, spec.phi_f);
    const Eigen::MatrixXd M(solver.mass_matrix());
    CHECK(max_abs(M - ref) <= 1e-13 * max_abs(ref));
    // Global assembly and the per-cell blocks agree, and nothing lies off the diagonal blocks.
    const int n = space.n_local();
    Eigen::MatrixXd blocks = Eigen::MatrixXd::Zero(M.rows(), M.cols());
    for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
      const auto o0 = static_cast<Eigen::Index>(space.dof(c, 0));
      blocks.block(o0, o0, n, n) = solver.mass_blocks()[c];
      Eigen::LLT<Eigen::MatrixXd> llt(solver.mass_blocks()[c]);
      CHECK(llt.info() == Eigen::Success);
    }
    CHECK(max_abs(M - blocks) <= 1e-15 * max_abs(M));
    const Eigen::VectorXd x = s.coeffs();
    CHECK((solver.apply_mass_inverse(M * x) - x).cwiseAbs().maxCoeff() <= 1e-13);
    const Eigen::VectorXd one = project(space, [](Point, Point) { return 1.0; }).coeffs();
    CHECK(solver.wetting_mass(x) == doctest::Approx(one.dot(M * x)).epsilon(1e-13));
  }
}

TEST_CASE("Neumann outflow uses the fractional flow of the trace") {
  // Linear k_r and equal viscosities keep λ_w/λ_t polynomial, so the oracle's quadrature is exact
  // on an outflow/inflow split Neumann boundary. P1 keeps ∇p, hence the inflow flags, constant
  // along each edge.
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 1);
  TwoPhaseSpec spec = corey_spec();
  spec.krw = {};
  spec.krn = {};
  spec.mu_w = spec.mu_n = 1.3;
  spec.pressure.neumann = [](Point x, Point) { return x.x < 0.5 ? -0.3 : 0.7; };
  TwoPhaseSolver solver(space, spec);
  const DGField s(space, field(space, 0.03, 3));
  const DGField p(space, field(space, 0.5, 5));
  const Oracles o = make_oracles(space, spec, s, p);
  ProblemSpec wetting = spec.pressure;
  wetting.source = spec.q_w;
  wetting.fracture_source = spec.qf_w;
  const SaturationOperator op = solver.saturation_operator(p.coeffs(), s.coeffs());
  const oracle::Dense ref = oracle::dense_forms(space, wetting, o.wetting);
  CHECK(max_abs(Eigen::MatrixXd(op.flux) - ref.A) <= 1e-12 * max_abs(ref.A));
  CHECK((op.flux_load - ref.b).cwiseAbs().maxCoeff() <= 1e-12 * ref.b.cwiseAbs().maxCoeff());
}

TEST_CASE("matrix-free right-hand side equals the assembled operator") {
  const Mesh mesh = fractured_mesh();
  for (int k : {1, 2, 3}) {
    const DGSpace space(mesh, k);
    for (Scheme scheme : {Scheme::Sipg, Scheme::Nipg, Scheme::Iipg}) {
      TwoPhaseSpec spec = corey_spec();
      spec.pressure.scheme = scheme;
      spec.pressure.permeability = [](Point x, int) { return Tensor2{2.0 + x.x, 0.3, 0.3, 1.0 + x.y}; };
      spec.pressure.neumann = [](Point x, Point) { return x.x - 0.4; };
      TwoPhaseSolver solver(space, spec);
      const Eigen::VectorXd p = field(space, 0.5, 21);
      const Eigen::VectorXd s = field(space, 0.1, 22);
      const Eigen::VectorXd ref = solver.saturation_operator(p, s).rhs(p, s);
      const Eigen::VectorXd got = solver.saturation_rhs(p, s);
      CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-12 * ref.cwiseAbs().maxCoeff());
    }
  }
}

TEST_CASE("constant pressure gives a zero saturation right-hand side") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 2);
  TwoPhaseSpec spec;
  spec.pressure.dirichlet = [](Point, Point) { return 2.0; };
  TwoPhaseSolver solver(space, spec);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(space.n_dofs());
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) p[space.dof(c, 0)] = 2.0 / ReferenceBasis::constant_mode();
  const Eigen::VectorXd s = field(space, 0.1, 1);
  const SaturationOperator op = solver.saturation_operator(p, s);
  CHECK(op.beta == 0.0);
  CHECK(op.beta_tilde == 0.0);
  CHECK(op.rhs(p, s).cwiseAbs().maxCoeff() <= 1e-11);
  CHECK(std::abs(solver.boundary_balance(p, s)) <= 1e-11);
}

TEST_CASE("uniform saturation switches the β terms off") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 1);
  const TwoPhaseSpec spec = corey_spec();
  TwoPhaseSolver solver(space, spec);
  const Eigen::VectorXd p = field(space, 0.5, 2);
  const Eigen::VectorXd s = project(space, [&](Point, Point) { return spec.s_inflow; }).coeffs();
  const SaturationOperator op = solver.saturation_operator(p, s);
  CHECK(op.beta > 0.0);
  CHECK(op.beta_tilde > 0.0);
  CHECK((op.penalty_load - op.penalty * s).cwiseAbs().maxCoeff() <= 1e-12 * op.penalty_load.cwiseAbs().maxCoeff());
}

TEST_CASE("testing with ξ ≡ 1 recovers the boundary balance") {
  const Mesh mesh = fractured_mesh();
  for (int k : {1, 2}) {
    const DGSpace space(mesh, k);
    const TwoPhaseSpec spec = corey_spec();
    TwoPhaseSolver solver(space, spec);
    const Eigen::VectorXd p = field(space, 0.5, 4);
    const Eigen::VectorXd s = field(space, 0.03, 6);
    const Eigen::VectorXd r = solver.saturation_operator(p, s).rhs(p, s);
    double total = 0.0;
    for (std::size_t c = 0; c < mesh.num_cells(); ++c) total += r[space.dof(c, 0)] / ReferenceBasis::constant_mode();
    CHECK(total == doctest::Approx(solver.boundary_balance(p, s)).epsilon(1e-12));
  }
}

TEST_CASE("linear relative permeabilities with equal viscosities reduce to single phase") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 2);
  TwoPhaseSpec spec = flow_spec();
  TwoPhaseSolver solver(space, spec);
  const SparseSystem ref = assemble(space, spec.pressure);
  const Eigen::VectorXd p = field(space, 0.5, 8);
  for (double v : {0.0, 0.5, 1.0}) {
    const Eigen::VectorXd s = project(space, [v](Point, Point) { return v; }).coeffs();
    const SparseSystem sys = solver.pressure_system(s, &p);
    CHECK(max_abs(Eigen::MatrixXd(sys.matrix - ref.matrix)) == 0.0);
    CHECK((sys.rhs - ref.rhs).cwiseAbs().maxCoeff() == 0.0);
  }
  const SparseSystem sys = solver.pressure_system(field(space, 0.3, 9), &p);
  CHECK(max_abs(Eigen::MatrixXd(sys.matrix - ref.matrix)) <= 1e-12 * max_abs(Eigen::MatrixXd(ref.matrix)));
}

TEST_CASE("SSP-RK3 matches the classical three-stage formula") {
  // Scalar y' = λy: one step multiplies by 1 + z + z²/2 + z³/6.
  const double lambda = -2.7, dt = 0.13;
  const double y = ssp_rk3(1.0, dt, [&](double v, int) { return lambda * v; }, [](double&, int) {});
  const double z = lambda * dt;
  CHECK(std::abs(y - (1.0 + z + z * z / 2.0 + z * z * z / 6.0)) <= 1e-15);

  // Linear autonomous system against the Butcher-form integrator.
  Eigen::Matrix2d A;
  A << -1.0, 2.0, -0.5, -3.0;
  const Eigen::Vector2d y0(1.0, -2.0);
  auto f = [&](const Eigen::Vector2d& v) -> Eigen::Vector2d { return A * v; };
  const Eigen::Vector2d k1 = f(y0);
  const Eigen::Vector2d k2 = f(y0 + dt * k1);
  const Eigen::Vector2d k3 = f(y0 + dt / 4.0 * (k1 + k2));
  const Eigen::Vector2d ref = y0 + dt / 6.0 * (k1 + k2 + 4.0 * k3);
  const Eigen::Vector2d got = ssp_rk3(y0, dt, [&](const Eigen::Vector2d& v, int) -> Eigen::Vector2d { return f(v); },
                                     [](Eigen::Vector2d&, int) {});
  CHECK((got - ref).norm() <= 1e-13);

  // Third order: halving dt divides the error at T = 1 by about 8.
  auto error = [&](int steps) {
    double v = 1.0;
    for (int i = 0; i < steps; ++i) v = ssp_rk3(v, 1.0 / steps, [&](double u, int) { return lambda * u; }, [](double&, int) {});
    return std::abs(v - std::exp(lambda));
  };
  const double ratio = error(40) / error(80);
  CHECK(ratio > 7.5);
  CHECK(ratio < 8.5);
}

TEST_CASE("a zero right-hand side leaves the state unchanged") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 1);
  TwoPhaseSpec spec;
  spec.pressure.dirichlet = [](Point, Point) { return 1.0; };
  spec.s_initial = [](Point, Point) { return 0.4; };
  TwoPhaseSolver solver(space, spec);
  TwoPhaseState st = solver.initial_state();
  const Eigen::VectorXd s0 = st.s;
  const StepReport rep = solver.step(st, 0.01);
  // The re-solved pressure is constant up to roundoff.
  CHECK((st.s - s0).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(rep.cells_limited == 0);
  CHECK(st.step == 1);
  CHECK(st.time == doctest::Approx(0.01));
}

TEST_CASE("limiters keep π-weighted cell means") {
  const Mesh mesh = fractured_mesh(8);
  for (int k : {1, 2}) {
    const DGSpace space(mesh, k);
    TwoPhaseSpec spec = flow_spec();
    TwoPhaseSolver solver(space, spec);
    Eigen::VectorXd s = field(space, 0.4, 12);
    const Eigen::VectorXd before = s;
    const LimiterReport tvb = solver.tvb_limit(s);
    CHECK(tvb.cells_limited > 0);
    std::vector<bool> fractured(mesh.num_cells(), false);
    for (const Edge& e : mesh.edges()) {
      if (e.cls == EdgeClass::Fracture) fractured[e.cells[0]] = fractured[e.cells[1]] = true;
    }
    double drift = 0.0, plain = 0.0;
    for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
      drift = std::max(drift, std::abs(solver.cell_mass(c, s) - solver.cell_mass(c, before)) / solver.cell_capacity(c));
      if (!fractured[c]) plain = std::max(plain, std::abs(s[space.dof(c, 0)] - before[space.dof(c, 0)]));
    }
    CHECK(drift <= 1e-14);
    CHECK(plain <= 1e-14);

    Eigen::VectorXd b = field(space, 0.6, 13);
    const Eigen::VectorXd b0 = b;
    const LimiterReport bp = solver.bound_limit(b);
    CHECK(bp.cells_limited > bp.cells_clamped);
    drift = 0.0;
    for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
      const double m0 = solver.cell_mass(c, b0) / solver.cell_capacity(c);
      if (m0 < 0.0 || m0 > 1.0) continue;  // clamped
      drift = std::max(drift, std::abs(solver.cell_mass(c, b) - solver.cell_mass(c, b0)) / solver.cell_capacity(c));
    }
    CHECK(drift <= 1e-14);
    const auto [lo, hi] = solver.range(b);
    CHECK(lo >= -1e-14);
    CHECK(hi <= 1.0 + 1e-14);
  }
}

TEST_CASE("bound limiter scales an overshoot toward the mean") {
  const Mesh mesh = generate_structured(2, {});
  const DGSpace space(mesh, 1);
  TwoPhaseSolver solver(space, flow_spec());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(space.n_dofs());
  s[space.dof(0, 0)] = 0.8 / ReferenceBasis::constant_mode();
  s[space.dof(0, 1)] = 1.0;
  // Rescale the slope so the largest check-point value is 1.2.
  double hi = solver.range(s).second;
  s[space.dof(0, 1)] *= 0.4 / (hi - 0.8);
  REQUIRE(solver.range(s).second == doctest::Approx(1.2).epsilon(1e-14));
  const LimiterReport rep = solver.bound_limit(s);
  CHECK(rep.cells_limited == 1);
  CHECK(solver.range(s).second == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(solver.cell_mass(0, s) / solver.cell_capacity(0) == doctest::Approx(0.8).epsilon(1e-14));

  // A mean outside [0,1] is clamped and the added mass reported.
  Eigen::VectorXd t = Eigen::VectorXd::Zero(space.n_dofs());
  t[space.dof(1, 0)] = -0.1 / ReferenceBasis::constant_mode();
  const LimiterReport c = solver.bound_limit(t);
  CHECK(c.cells_clamped == 1);
  CHECK(c.clamp_mass == doctest::Approx(0.1 * solver.cell_capacity(1)).epsilon(1e-14));
  CHECK(t.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("TVB limiter with a large constant leaves smooth data alone") {
  const Mesh mesh = fractured_mesh(8);
  const DGSpace space(mesh, 2);
  TwoPhaseSpec spec = flow_spec();
  spec.tvb_m = 1e6;
  TwoPhaseSolver solver(space, spec);
  Eigen::VectorXd s = field(space, 0.0, 1);
  const Eigen::VectorXd before = s;
  CHECK(solver.tvb_limit(s).cells_limited == 0);
  CHECK((s - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("step profile on a strip: total variation of cell means does not grow") {
  StructuredGridSpec g;
  g.nx = 50;
  g.ny = 1;
  g.height = 0.02;
  const Mesh mesh = generate_structured(
      g, {}, {{BoundarySide::Top, EdgeClass::Neumann}, {BoundarySide::Bottom, EdgeClass::Neumann}});
  for (int k : {1, 2}) {
    const DGSpace space(mesh, k);
    TwoPhaseSpec spec = flow_spec();
    spec.s_initial = [](Point x, Point) { return x.x < 0.3 ? 1.0 : 0.0; };
    TwoPhaseSolver solver(space, spec);
    TwoPhaseState st = solver.initial_state();
    auto tv = [&](const Eigen::VectorXd& s) {
      std::vector<double> col(g.nx, 0.0);
      for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
        const auto i = static_cast<std::size_t>(mesh.centroid(c).x * g.nx);
        col[i] += 0.5 * s[space.dof(c, 0)] * ReferenceBasis::constant_mode();
      }
      double v = 0.0;
      for (std::size_t i = 1; i < col.size(); ++i) v += std::abs(col[i] - col[i - 1]);
      return v;
    };
    double prev = tv(st.s);
    bool grew = false;
    for (int n = 0; n < 50; ++n) {
      const StepReport rep = solver.step(st, solver.cfl_dt(st.p, st.s));
      const double now = tv(st.s);
      if (now > prev + 1e-12) grew = true;
      prev = now;
      CHECK(rep.s_min >= -1e-12);
      CHECK(rep.s_max <= 1.0 + 1e-12);
    }
    CHECK_FALSE(grew);
    CHECK(st.time > 0.0);
  }
}

TEST_CASE("time step follows the velocity") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 1);
  TwoPhaseSpec spec = flow_spec();
  spec.dt_max = 0.125;
  TwoPhaseSolver solver(space, spec);
  const Eigen::VectorXd s = field(space, 0.05, 3);
  const Eigen::VectorXd flat = project(space, [](Point, Point) { return 3.0; }).coeffs();
  CHECK(solver.cfl_dt(flat, s) == 0.125);
  const Eigen::VectorXd p = field(space, 0.5, 4);
  const double dt = solver.cfl_dt(p, s);
  CHECK(dt < 0.125);
  CHECK(solver.cfl_dt(2.0 * p, s) == doctest::Approx(dt / 2.0).epsilon(1e-14));
}

TEST_CASE("displacement keeps bounds and balances wetting mass every step") {
  const Mesh mesh = fractured_mesh(8);
  for (bool corey : {false, true}) {
    for (int k : {1, 2}) {
      const DGSpace space(mesh, k);
      TwoPhaseSpec spec = flow_spec();
      spec.pressure.permeability = [](Point, int) { return kK; };
      spec.q_w = [](Point x, Point) { return x.x < 0.5 && x.y < 0.5 ? 0.5 : 0.0; };
      if (corey) {
        spec.krw = [](double v) { return v * v; };
        spec.krn = [](double v) { return (1.0 - v) * (1.0 - v); };
        spec.mu_n = 3.0;
      }
      TwoPhaseSolver solver(space, spec);
      TwoPhaseState st = solver.initial_state();
      double worst = 0.0;
      for (int n = 0; n < 20; ++n) {
        const StepReport rep = solver.step(st, solver.cfl_dt(st.p, st.s));
        CHECK(rep.s_min >= -1e-12);
        CHECK(rep.s_max <= 1.0 + 1e-12);
        worst = std::max(worst, rep.balance_residual);
      }
      CHECK(worst <= 1e-8);
      CHECK(solver.wetting_mass(st.s) > 0.0);
      if (!corey) CHECK(solver.factorizations() == 1);
    }
  }
}

TEST_CASE("checkpoint round trip and mismatch rejection") {
  const Mesh mesh = fractured_mesh();
  const DGSpace space(mesh, 1);
  TwoPhaseState st;
  st.time = 0.125;
  st.step = 42;
  st.s = field(space, 0.1, 1);
  st.p = field(space, 0.1, 2);
  std::stringstream buf;
  write_checkpoint(buf, space, st);
  CHECK(buf.str().size() == 64 + 2 * space.n_dofs() * sizeof(double));
  const TwoPhaseState back = read_checkpoint(buf, space);
  CHECK(back.time == st.time);
  CHECK(back.step == st.step);
  CHECK(back.s == st.s);
  CHECK(back.p == st.p);

  std::stringstream again;
  write_checkpoint(again, space, st);
  const DGSpace p2(mesh, 2);
  CHECK_THROWS_AS(read_checkpoint(again, p2), Error);

  const Mesh other = fractured_mesh(8);
  const DGSpace o1(other, 1);
  std::stringstream third;
  write_checkpoint(third, space, st);
  CHECK_THROWS_AS(read_checkpoint(third, o1), Error);

  std::string bad = buf.str();
  std::stringstream fourth;
  write_checkpoint(fourth, space, st);
  bad = fourth.str();
  bad[0] = 'X';
  std::stringstream corrupt(bad);
  CHECK_THROWS_AS(read_checkpoint(corrupt, space), Error);
  std::stringstream truncated(fourth.str().substr(0, 100));
  CHECK_THROWS_AS(read_checkpoint(truncated, space), Error);
}

TEST_CASE("two-phase configuration validation") {
  TwoPhaseSpec s;
  CHECK_NOTHROW(s.validate());
  TwoPhaseSpec a = s;
  a.phi_m = 0.0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = s;
  a.phi_f = 1.5;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = s;
  a.mu_w = 0.0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = s;
  a.krw = [](double v) { return 2.0 * v; };
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = s;
  a.krw = [](double v) { return v * v; };
  a.krn = [](double v) { return v > 0.5 ? 0.5 : 0.0; };
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a = s;
  a.beta0 = -1.0;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  CHECK(s.cfl_number(1) == doctest::Approx(0.2 / 3.0));
  CHECK(s.dlambda_w(0.3) == doctest::Approx(1.0));
}
