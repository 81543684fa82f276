#include "dfm/two_phase.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

double TwoPhaseSpec::krw_at(double s) const {
  s = std::clamp(s, 0.0, 1.0);
  return krw ? krw(s) : s;
}

double TwoPhaseSpec::krn_at(double s) const {
  s = std::clamp(s, 0.0, 1.0);
  return krn ? krn(s) : 1.0 - s;
}

double TwoPhaseSpec::dlambda_w(double s) const {
  constexpr double h = 1e-6;
  s = std::clamp(s, 0.0, 1.0);
  const double lo = std::max(0.0, s - h);
  const double hi = std::min(1.0, s + h);
  return (lambda_w(hi) - lambda_w(lo)) / (hi - lo);
}

void TwoPhaseSpec::validate() const {
  pressure.validate();
  if (!(phi_m > 0.0 && phi_m <= 1.0)) throw ConfigError("matrix porosity must lie in (0,1]");
  if (!(phi_f > 0.0 && phi_f <= 1.0)) throw ConfigError("fracture porosity must lie in (0,1]");
  if (!(mu_n > 0.0) || !(mu_w > 0.0)) throw ConfigError("viscosities must be positive");
  if (!(beta0 > 0.0) || !(beta_tilde0 > 0.0)) throw ConfigError("saturation penalties must be positive");
  if (!(s_inflow >= 0.0 && s_inflow <= 1.0)) throw ConfigError("inflow saturation must lie in [0,1]");
  if (tvb_m < 0.0) throw ConfigError("TVB constant must be non-negative");
  if (!(dt_max > 0.0)) throw ConfigError("dt_max must be positive");
  if (end_time < 0.0) throw ConfigError("end time must be non-negative");
  if (cfl > 1.0) throw ConfigError("CFL number above 1");
  for (int i = 0; i <= 100; ++i) {
    const double s = i / 100.0;
    const double w = krw_at(s), n = krn_at(s);
    if (!(w >= 0.0 && w <= 1.0) || !(n >= 0.0 && n <= 1.0)) {
      throw ConfigError("relative permeability leaves [0,1] at s = " + std::to_string(s));
    }
    if (!(lambda_t(s) > 0.0)) throw ConfigError("total mobility vanishes at s = " + std::to_string(s));
  }
}

namespace {

ScalarFn sum(const ScalarFn& a, const ScalarFn& b) {
  if (!a) return b;
  if (!b) return a;
  return [a, b](Point x, Point inside) { return a(x, inside) + b(x, inside); };
}

Point edge_point(const Mesh& mesh, const Edge& e, double t) {
  const Point a = mesh.vertices()[e.vertices[0]];
  const Point b = mesh.vertices()[e.vertices[1]];
  return a + t * (b - a);
}

int side_index(const Edge& e, std::size_t cell) { return e.cells[0] == cell ? 0 : 1; }

BasisTable tabulate(const ReferenceBasis& basis, const std::vector<Point>& points) {
  BasisTable t;
  t.val.resize(points.size());
  t.ref_grad.resize(points.size());
  for (std::size_t q = 0; q < points.size(); ++q) {
    basis.eval(points[q], t.val[q].data(), t.ref_grad[q].data());
  }
  return t;
}

double minmod(double a, double b) {
  if (a > 0.0 && b > 0.0) return std::min(a, b);
  if (a < 0.0 && b < 0.0) return std::max(a, b);
  return 0.0;
}

}  // namespace

TwoPhaseSolver::TwoPhaseSolver(const DGSpace& space, TwoPhaseSpec spec, SolverConfig solver,
                               unsigned threads)
    : space_(&space), spec_(std::move(spec)), solver_(solver) {
  spec_.validate();
  solver_.validate();
  options_.threads = std::max(1u, threads);

  total_ = spec_.pressure;
  total_.source = sum(spec_.q_n, spec_.q_w);
  total_.fracture_source = sum(spec_.qf_n, spec_.qf_w);
  constant_total_ = true;
  for (int i = 0; i <= 1000; ++i) {
    if (spec_.lambda_t(i / 1000.0) != spec_.lambda_t(0.0)) constant_total_ = false;
  }
  wetting_ = spec_.pressure;
  wetting_.source = spec_.q_w;
  wetting_.fracture_source = spec_.qf_w;

  const Mesh& mesh = space.mesh();
  const int n = space.n_local();
  const std::size_t nc = mesh.num_cells();
  const auto& rule = space.edge_rule();

  mass_.assign(nc, Eigen::MatrixXd::Zero(n, n));
  for (std::size_t c = 0; c < nc; ++c) {
    mass_[c].diagonal().setConstant(spec_.phi_m * space.det_j(c));
  }
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    if (edge.cls != EdgeClass::Fracture) continue;
    const double aphi = 0.5 * mesh.features()[edge.feature].aperture * spec_.phi_f;
    for (int s = 0; s < 2; ++s) {
      const BasisTable& tab = space.trace_table(e, s);
      Eigen::MatrixXd& m = mass_[edge.cells[s]];
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double w = aphi * rule.weights[q] * edge.length;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) m(i, j) += w * tab.val[q][i] * tab.val[q][j];
        }
      }
    }
  }
  mass_inv_.resize(nc);
  capacity_.resize(nc);
  unit_mass_.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    mass_inv_[c] = mass_[c].inverse();
    unit_mass_[c] = mass_[c].col(0) / ReferenceBasis::constant_mode();
    capacity_[c] = unit_mass_[c][0] / ReferenceBasis::constant_mode();
  }

  BlockMatrix edges(space);
  std::array<double, kMaxLocal * kMaxLocal> block{};
  const std::array<double, 2> sg{1.0, -1.0};
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    if (edge.cls != EdgeClass::Interior && edge.cls != EdgeClass::Barrier &&
        edge.cls != EdgeClass::Fracture) {
      continue;
    }
    const std::array<const BasisTable*, 2> tab{&space.trace_table(e, 0), &space.trace_table(e, 1)};
    for (int ts = 0; ts < 2; ++ts) {
      for (int rs = 0; rs < 2; ++rs) {
        block.fill(0.0);
        for (std::size_t q = 0; q < rule.size(); ++q) {
          const double w = sg[ts] * sg[rs] * rule.weights[q] * edge.length;
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
              block[i * kMaxLocal + j] += w * tab[ts]->val[q][i] * tab[rs]->val[q][j];
            }
          }
        }
        edges.add(edge.cells[ts], edge.cells[rs], block.data());
      }
    }
  }
  jump_edges_ = std::move(edges.matrix());

  BlockMatrix verts(space);
  for (const FractureVertex& rec : mesh.fracture_vertices()) {
    const auto* ic = std::get_if<InteriorCoupling>(&rec.coupling);
    if (!ic) continue;
    for (int side = 0; side < 2; ++side) {
      const auto& cell = ic->cells[side];
      std::array<const double*, 2> v{};
      for (int X = 0; X < 2; ++X) {
        v[X] = space.corner_table(space.corner_of(cell[X], rec.vertex)).val[0].data();
      }
      for (int Y = 0; Y < 2; ++Y) {
        for (int X = 0; X < 2; ++X) {
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) block[i * kMaxLocal + j] = sg[Y] * sg[X] * v[Y][i] * v[X][j];
          }
          verts.add(cell[Y], cell[X], block.data());
        }
      }
    }
  }
  jump_vertices_ = std::move(verts.matrix());

  neighbours_.resize(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    for (int l = 0; l < 3; ++l) {
      const Edge& edge = mesh.edges()[mesh.cells()[c].edges[l]];
      neighbours_[c][l] = edge.cls == EdgeClass::Barrier || edge.is_boundary()
                              ? kNone
                              : edge.cells[side_index(edge, c) == 0 ? 1 : 0];
    }
  }

  const std::array<Point, 3> corner{Point{0.0, 0.0}, Point{1.0, 0.0}, Point{0.0, 1.0}};
  std::vector<Point> mids;
  for (int l = 0; l < 3; ++l) mids.push_back(0.5 * (corner[l] + corner[(l + 1) % 3]));
  midpoints_ = tabulate(space.basis(), mids);

  std::vector<Point> checks = space.cell_rule().points;
  for (int l = 0; l < 3; ++l) {
    for (double t : rule.points) checks.push_back(corner[l] + t * (corner[(l + 1) % 3] - corner[l]));
  }
  for (const Point& c : corner) checks.push_back(c);
  checks_ = tabulate(space.basis(), checks);
}

double TwoPhaseSolver::trace(const Eigen::VectorXd& u, std::size_t cell, const double* basis) const {
  const int n = space_->n_local();
  const double* c = u.data() + space_->dof(cell, 0);
  double v = 0.0;
  for (int i = 0; i < n; ++i) v += c[i] * basis[i];
  return v;
}

Point TwoPhaseSolver::gradient(const Eigen::VectorXd& u, std::size_t cell, const Point* ref_grad) const {
  const int n = space_->n_local();
  const double* c = u.data() + space_->dof(cell, 0);
  Point g{0.0, 0.0};
  for (int i = 0; i < n; ++i) g = g + c[i] * ref_grad[i];
  return space_->physical_gradient(cell, g);
}

double TwoPhaseSolver::value_at(const Eigen::VectorXd& u, std::size_t cell, Point x) const {
  std::array<double, kMaxLocal> v{};
  space_->eval_basis(cell, x, v.data());
  return trace(u, cell, v.data());
}

Point TwoPhaseSolver::gradient_at(const Eigen::VectorXd& u, std::size_t cell, Point x) const {
  std::array<double, kMaxLocal> v{};
  std::array<Point, kMaxLocal> g{};
  space_->eval_basis(cell, x, v.data(), g.data());
  const double* c = u.data() + space_->dof(cell, 0);
  Point out{0.0, 0.0};
  for (int i = 0; i < space_->n_local(); ++i) out = out + c[i] * g[i];
  return out;
}

bool TwoPhaseSolver::edge_inflow(const Eigen::VectorXd& p, std::size_t edge, Point x) const {
  const Mesh& mesh = space_->mesh();
  const Edge& e = mesh.edges()[edge];
  const std::size_t cell = e.cells[0];
  const Tensor2 K = spec_.pressure.K(x, mesh.cells()[cell].region);
  return dot(K.apply(gradient_at(p, cell, x)), e.normal) > 0.0;
}

bool TwoPhaseSolver::vertex_inflow(const Eigen::VectorXd& p, std::size_t record, int side) const {
  const Mesh& mesh = space_->mesh();
  const FractureVertex& rec = mesh.fracture_vertices()[record];
  const auto& bc = std::get<BoundaryCoupling>(rec.coupling);
  const std::size_t cell = bc.cells[side];
  const BasisTable& tab = space_->corner_table(space_->corner_of(cell, rec.vertex));
  const Point g = gradient(p, cell, tab.ref_grad[0].data());
  return bc.sign * dot(g, mesh.edges()[bc.edge].tangent) > 0.0;
}

Coefficients TwoPhaseSolver::mobility(const Eigen::VectorXd& s, const Eigen::VectorXd* p,
                                      bool wetting) const {
  auto lam = [this, wetting](double v) { return wetting ? spec_.lambda_w(v) : spec_.lambda_t(v); };
  Coefficients c;
  c.cell = [this, &s, lam](std::size_t cell, Point x) { return lam(value_at(s, cell, x)); };
  c.dirichlet_edge = [this, &s, p, lam](std::size_t e, Point x) {
    if (p && edge_inflow(*p, e, x)) return lam(spec_.s_inflow);
    return lam(value_at(s, space_->mesh().edges()[e].cells[0], x));
  };
  c.dirichlet_vertex = [this, &s, p, lam](std::size_t r, int side) {
    if (p && vertex_inflow(*p, r, side)) return lam(spec_.s_inflow);
    const FractureVertex& rec = space_->mesh().fracture_vertices()[r];
    const std::size_t cell = std::get<BoundaryCoupling>(rec.coupling).cells[side];
    return lam(trace(s, cell, space_->corner_table(space_->corner_of(cell, rec.vertex)).val[0].data()));
  };
  if (wetting) {
    c.neumann_flux = [this, &s](std::size_t e, Point x) {
      const Mesh& mesh = space_->mesh();
      const std::size_t cell = mesh.edges()[e].cells[0];
      const Point inside = mesh.centroid(cell);
      const double g = spec_.pressure.neumann ? spec_.pressure.neumann(x, inside) : 0.0;
      if (g > 0.0) {
        if (spec_.neumann_wetting) return spec_.neumann_wetting(x, inside);
        return spec_.lambda_w(spec_.s_inflow) / spec_.lambda_t(spec_.s_inflow) * g;
      }
      const double v = value_at(s, cell, x);
      return spec_.lambda_w(v) / spec_.lambda_t(v) * g;
    };
  }
  return c;
}

SparseSystem TwoPhaseSolver::pressure_system(const Eigen::VectorXd& s,
                                             const Eigen::VectorXd* inflow_pressure) const {
  return assemble(*space_, total_, mobility(s, inflow_pressure, false), options_);
}

Eigen::VectorXd TwoPhaseSolver::solve_system(const SparseSystem& sys) {
  const bool direct = solver_.method == SolverMethod::Direct ||
                      (solver_.method == SolverMethod::Auto && space_->n_dofs() <= solver_.direct_limit);
  if (!direct) return solve(sys, solver_).x;
  const bool same = direct_.factorized() && factored_symmetric_ == sys.symmetric &&
                    factored_.nonZeros() == sys.matrix.nonZeros() &&
                    std::equal(factored_.valuePtr(), factored_.valuePtr() + factored_.nonZeros(),
                               sys.matrix.valuePtr());
  if (!same) {
    direct_.factorize(sys.matrix, sys.symmetric);
    if (sys.symmetric && !direct_.cholesky()) {
      throw SolverError("pressure matrix is not positive definite; check the penalties and mobilities");
    }
    factored_ = sys.matrix;
    factored_symmetric_ = sys.symmetric;
    ++factorizations_;
  }
  Eigen::VectorXd x = direct_.solve(sys.rhs);
  if (!x.allFinite()) throw SolverError("pressure solve produced non-finite values");
  return x;
}

Eigen::VectorXd TwoPhaseSolver::solve_pressure(const Eigen::VectorXd& s, const Eigen::VectorXd* previous) {
  // With constant λ_t the system does not depend on s or on the inflow split, so every
  // re-solve would reproduce the same p.
  if (constant_total_) {
    if (fixed_pressure_.size() == 0) fixed_pressure_ = solve_system(pressure_system(s, nullptr));
    return fixed_pressure_;
  }
  if (previous) return solve_system(pressure_system(s, previous));
  const Eigen::VectorXd guess = solve_system(pressure_system(s, nullptr));
  return solve_system(pressure_system(s, &guess));
}

TwoPhaseState TwoPhaseSolver::initial_state() {
  TwoPhaseState st;
  if (spec_.s_initial) {
    st.s = project(*space_, spec_.s_initial).coeffs();
  } else {
    st.s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space_->n_dofs()));
  }
  if (spec_.bound_limiter) bound_limit(st.s);
  st.p = solve_pressure(st.s, nullptr);
  return st;
}

std::pair<double, double> TwoPhaseSolver::penalties(const Eigen::VectorXd& p) const {
  const Mesh& mesh = space_->mesh();
  const auto& rule = space_->cell_rule();
  const auto& ref = space_->cell_table().ref_grad;
  double bulk = 0.0;
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const int region = mesh.cells()[c].region;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = space_->to_physical(c, rule.points[q]);
      bulk = std::max(bulk, norm(spec_.pressure.K(x, region).apply(gradient(p, c, ref[q].data()))));
    }
  }
  double frac = 0.0;
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    if (edge.cls != EdgeClass::Fracture) continue;
    const auto& f = mesh.features()[edge.feature];
    for (int s = 0; s < 2; ++s) {
      const BasisTable& tab = space_->trace_table(e, s);
      for (std::size_t q = 0; q < tab.ref_grad.size(); ++q) {
        const double d = dot(gradient(p, edge.cells[s], tab.ref_grad[q].data()), edge.tangent);
        frac = std::max(frac, std::abs(f.aperture * f.permeability * d));
      }
    }
  }
  return {spec_.beta0 * bulk, spec_.beta_tilde0 * frac};
}

SaturationOperator TwoPhaseSolver::saturation_operator(const Eigen::VectorXd& p,
                                                       const Eigen::VectorXd& s) const {
  SaturationOperator op;
  SparseSystem flux = assemble(*space_, wetting_, mobility(s, &p, true), options_);
  op.flux = std::move(flux.matrix);
  op.flux_load = std::move(flux.rhs);
  std::tie(op.beta, op.beta_tilde) = penalties(p);

  const Mesh& mesh = space_->mesh();
  const int n = space_->n_local();
  const auto& rule = space_->edge_rule();
  BlockMatrix pen(*space_);
  const Eigen::Index nnz = jump_edges_.nonZeros();
  double* v = pen.matrix().valuePtr();
  for (Eigen::Index i = 0; i < nnz; ++i) {
    v[i] = op.beta * jump_edges_.valuePtr()[i] + op.beta_tilde * jump_vertices_.valuePtr()[i];
  }
  op.penalty_load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space_->n_dofs()));
  std::array<double, kMaxLocal * kMaxLocal> block{};
  const double sd = spec_.s_inflow;
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    if (edge.cls != EdgeClass::Dirichlet) continue;
    const std::size_t cell = edge.cells[0];
    const BasisTable& tab = space_->trace_table(e, 0);
    block.fill(0.0);
    bool any = false;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = edge_point(mesh, edge, rule.points[q]);
      if (!edge_inflow(p, e, x)) continue;
      any = true;
      const double w = op.beta * rule.weights[q] * edge.length;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) block[i * kMaxLocal + j] += w * tab.val[q][i] * tab.val[q][j];
        op.penalty_load[static_cast<Eigen::Index>(space_->dof(cell, i))] += w * sd * tab.val[q][i];
      }
    }
    if (any) pen.add(cell, cell, block.data());
  }
  const auto& records = mesh.fracture_vertices();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto* bc = std::get_if<BoundaryCoupling>(&records[r].coupling);
    if (!bc || !bc->dirichlet) continue;
    for (int side = 0; side < 2; ++side) {
      if (!vertex_inflow(p, r, side)) continue;
      const std::size_t cell = bc->cells[side];
      const double* val = space_->corner_table(space_->corner_of(cell, records[r].vertex)).val[0].data();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) block[i * kMaxLocal + j] = op.beta_tilde * val[i] * val[j];
        op.penalty_load[static_cast<Eigen::Index>(space_->dof(cell, i))] += op.beta_tilde * sd * val[i];
      }
      pen.add(cell, cell, block.data());
    }
  }
  op.penalty = std::move(pen.matrix());
  return op;
}

// Matrix-free H_h + I_h − c_h − d_h: the same terms as saturation_operator, accumulated per
// test function from tabulated traces.
Eigen::VectorXd TwoPhaseSolver::saturation_rhs(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const {
  const Mesh& mesh = space_->mesh();
  const int n = space_->n_local();
  const int k = space_->degree();
  const double sigma = dfm::sigma(spec_.pressure.scheme);
  const double sd = spec_.s_inflow;
  const auto [beta, beta_tilde] = penalties(p);
  Eigen::VectorXd R = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space_->n_dofs()));
  auto out = [&](std::size_t cell) { return R.data() + space_->dof(cell, 0); };
  std::array<Point, kMaxLocal> g{};
  auto grads = [&](std::size_t cell, const Point* ref) {
    for (int i = 0; i < n; ++i) g[i] = space_->physical_gradient(cell, ref[i]);
  };

  const auto& crule = space_->cell_rule();
  const BasisTable& ctab = space_->cell_table();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const int region = mesh.cells()[c].region;
    const Point inside = mesh.centroid(c);
    const double det = space_->det_j(c);
    double* r = out(c);
    for (std::size_t q = 0; q < crule.size(); ++q) {
      const Point x = space_->to_physical(c, crule.points[q]);
      const double w = crule.weights[q] * det;
      grads(c, ctab.ref_grad[q].data());
      Point gp{0.0, 0.0};
      for (int j = 0; j < n; ++j) gp = gp + p[space_->dof(c, j)] * g[j];
      const Point flux = spec_.lambda_w(trace(s, c, ctab.val[q].data())) * spec_.pressure.K(x, region).apply(gp);
      const double src = spec_.q_w ? spec_.q_w(x, inside) : 0.0;
      for (int i = 0; i < n; ++i) r[i] += w * (src * ctab.val[q][i] - dot(flux, g[i]));
    }
  }

  const auto& rule = space_->edge_rule();
  const std::array<double, 2> sg{1.0, -1.0};
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    const double alpha = edge_penalty(spec_.pressure.alpha0, k, edge.length);
    if (edge.cls == EdgeClass::Interior || edge.cls == EdgeClass::Fracture || edge.cls == EdgeClass::Barrier) {
      const std::array<std::size_t, 2> cell{edge.cells[0], edge.cells[1]};
      const std::array<const BasisTable*, 2> tab{&space_->trace_table(e, 0), &space_->trace_table(e, 1)};
      const std::array<int, 2> region{mesh.cells()[cell[0]].region, mesh.cells()[cell[1]].region};
      const bool barrier = edge.cls == EdgeClass::Barrier;
      double kb = 0.0;
      if (barrier) kb = mesh.features()[edge.feature].permeability / mesh.features()[edge.feature].aperture;
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const Point x = edge_point(mesh, edge, rule.points[q]);
        const double w = rule.weights[q] * edge.length;
        std::array<double, 2> lam{}, pv{}, sv{}, fl{};
        std::array<Tensor2, 2> K{};
        for (int t = 0; t < 2; ++t) {
          sv[t] = trace(s, cell[t], tab[t]->val[q].data());
          pv[t] = trace(p, cell[t], tab[t]->val[q].data());
          lam[t] = spec_.lambda_w(sv[t]);
          if (!barrier) {
            K[t] = lam[t] * spec_.pressure.K(x, region[t]);
            fl[t] = dot(K[t].apply(gradient(p, cell[t], tab[t]->ref_grad[q].data())), edge.normal);
          }
        }
        const double jp = pv[0] - pv[1];
        const double js = sv[0] - sv[1];
        const double lavg = 0.5 * (lam[0] + lam[1]);
        for (int t = 0; t < 2; ++t) {
          double* r = out(cell[t]);
          const auto& val = tab[t]->val[q];
          if (barrier) {
            for (int i = 0; i < n; ++i) r[i] -= w * sg[t] * val[i] * (lavg * kb * jp + beta * js);
            continue;
          }
          grads(cell[t], tab[t]->ref_grad[q].data());
          const double favg = 0.5 * (fl[0] + fl[1]);
          for (int i = 0; i < n; ++i) {
            const double test_flux = dot(K[t].apply(g[i]), edge.normal);
            r[i] -= w * (sg[t] * val[i] * (-favg + alpha * lavg * jp + beta * js) + sigma * 0.5 * test_flux * jp);
          }
        }
      }
      if (edge.cls == EdgeClass::Fracture) {
        const auto& f = mesh.features()[edge.feature];
        const Point fin = mesh.centroid(edge.side_cells[0]);
        for (int t = 0; t < 2; ++t) {
          double* r = out(cell[t]);
          for (std::size_t q = 0; q < rule.size(); ++q) {
            const Point x = edge_point(mesh, edge, rule.points[q]);
            const double w = rule.weights[q] * edge.length;
            const auto& val = tab[t]->val[q];
            grads(cell[t], tab[t]->ref_grad[q].data());
            Point gp{0.0, 0.0};
            for (int j = 0; j < n; ++j) gp = gp + p[space_->dof(cell[t], j)] * g[j];
            const double coef = 0.5 * f.aperture * f.permeability * spec_.lambda_w(trace(s, cell[t], val.data())) *
                                dot(gp, edge.tangent);
            const double qf = spec_.qf_w ? 0.5 * spec_.qf_w(x, fin) : 0.0;
            for (int i = 0; i < n; ++i) r[i] += w * (qf * val[i] - coef * dot(g[i], edge.tangent));
          }
        }
      }
    } else if (edge.cls == EdgeClass::Dirichlet) {
      const std::size_t cell = edge.cells[0];
      const int region = mesh.cells()[cell].region;
      const Point inside = mesh.centroid(cell);
      const BasisTable& tab = space_->trace_table(e, 0);
      double* r = out(cell);
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const Point x = edge_point(mesh, edge, rule.points[q]);
        const double w = rule.weights[q] * edge.length;
        const auto& val = tab.val[q];
        grads(cell, tab.ref_grad[q].data());
        Point gp{0.0, 0.0};
        for (int j = 0; j < n; ++j) gp = gp + p[space_->dof(cell, j)] * g[j];
        const Tensor2 K = spec_.pressure.K(x, region);
        const double kn = dot(K.apply(gp), edge.normal);
        const bool in = kn > 0.0;
        const double sv = trace(s, cell, val.data());
        const double lam = spec_.lambda_w(in ? sd : sv);
        const double gd = spec_.pressure.dirichlet ? spec_.pressure.dirichlet(x, inside) : 0.0;
        const double dp = trace(p, cell, val.data()) - gd;
        const double bs = in ? beta * (sv - sd) : 0.0;
        for (int i = 0; i < n; ++i) {
          const double test_flux = lam * dot(K.apply(g[i]), edge.normal);
          r[i] -= w * (val[i] * (-lam * kn + alpha * lam * dp + bs) + sigma * test_flux * dp);
        }
      }
    } else if (edge.cls == EdgeClass::Neumann && spec_.pressure.neumann) {
      const std::size_t cell = edge.cells[0];
      const Point inside = mesh.centroid(cell);
      const BasisTable& tab = space_->trace_table(e, 0);
      double* r = out(cell);
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const Point x = edge_point(mesh, edge, rule.points[q]);
        const double w = rule.weights[q] * edge.length;
        const double gn = spec_.pressure.neumann(x, inside);
        double gw;
        if (gn > 0.0) {
          gw = spec_.neumann_wetting ? spec_.neumann_wetting(x, inside)
                                     : spec_.lambda_w(sd) / spec_.lambda_t(sd) * gn;
        } else {
          const double v = trace(s, cell, tab.val[q].data());
          gw = spec_.lambda_w(v) / spec_.lambda_t(v) * gn;
        }
        for (int i = 0; i < n; ++i) r[i] += w * gw * tab.val[q][i];
      }
    }
  }

  const auto& records = mesh.fracture_vertices();
  for (std::size_t rec_i = 0; rec_i < records.size(); ++rec_i) {
    const FractureVertex& rec = records[rec_i];
    const auto& f = mesh.features()[rec.feature];
    const double akf = f.aperture * f.permeability;
    const Point P = mesh.vertices()[rec.vertex];
    if (const auto* ic = std::get_if<InteriorCoupling>(&rec.coupling)) {
      const double pen = edge_penalty(spec_.pressure.alpha_tilde0, k, ic->h_star);
      const std::array<Point, 2> tangent{mesh.edges()[ic->e1].tangent, mesh.edges()[ic->e2].tangent};
      for (int side = 0; side < 2; ++side) {
        const auto& cell = ic->cells[side];
        std::array<const BasisTable*, 2> tab{};
        std::array<double, 2> lam{}, pv{}, sv{}, fl{};
        for (int X = 0; X < 2; ++X) {
          tab[X] = &space_->corner_table(space_->corner_of(cell[X], rec.vertex));
          sv[X] = trace(s, cell[X], tab[X]->val[0].data());
          pv[X] = trace(p, cell[X], tab[X]->val[0].data());
          lam[X] = spec_.lambda_w(sv[X]);
          fl[X] = akf * lam[X] * dot(gradient(p, cell[X], tab[X]->ref_grad[0].data()), tangent[X]);
        }
        const double jp = pv[0] - pv[1];
        const double penw = pen * 0.5 * (lam[0] + lam[1]);
        for (int Y = 0; Y < 2; ++Y) {
          double* r = out(cell[Y]);
          grads(cell[Y], tab[Y]->ref_grad[0].data());
          for (int i = 0; i < n; ++i) {
            const double ji = sg[Y] * tab[Y]->val[0][i];
            const double test_flux = akf * lam[Y] * dot(g[i], tangent[Y]);
            r[i] -= ji * (penw * jp - 0.25 * (fl[0] + fl[1]) + beta_tilde * (sv[0] - sv[1])) +
                    0.25 * sigma * test_flux * jp;
          }
        }
      }
    } else if (const auto* bc = std::get_if<BoundaryCoupling>(&rec.coupling)) {
      if (!bc->dirichlet) continue;
      const double pen = edge_penalty(spec_.pressure.alpha_tilde0, k, bc->h_e);
      const Point tangent = mesh.edges()[bc->edge].tangent;
      const double sign = bc->sign;
      for (int side = 0; side < 2; ++side) {
        const std::size_t cell = bc->cells[side];
        const BasisTable& tab = space_->corner_table(space_->corner_of(cell, rec.vertex));
        grads(cell, tab.ref_grad[0].data());
        Point gp{0.0, 0.0};
        for (int j = 0; j < n; ++j) gp = gp + p[space_->dof(cell, j)] * g[j];
        const double dpt = dot(gp, tangent);
        const bool in = sign * dpt > 0.0;
        const double sv = trace(s, cell, tab.val[0].data());
        const double lam = spec_.lambda_w(in ? sd : sv);
        const double gd = spec_.pressure.dirichlet ? spec_.pressure.dirichlet(P, mesh.centroid(cell)) : 0.0;
        const double dp = trace(p, cell, tab.val[0].data()) - gd;
        const double bs = in ? beta_tilde * (sv - sd) : 0.0;
        double* r = out(cell);
        for (int i = 0; i < n; ++i) {
          const double test_flux = akf * lam * dot(g[i], tangent);
          r[i] -= tab.val[0][i] * (pen * lam * dp - 0.5 * sign * akf * lam * dpt + bs) +
                  0.5 * sigma * sign * test_flux * dp;
        }
      }
    }
  }
  return R;
}

double TwoPhaseSolver::boundary_balance(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const {
  const Mesh& mesh = space_->mesh();
  const int k = space_->degree();
  const auto [beta, beta_tilde] = penalties(p);
  const double sd = spec_.s_inflow;
  const Coefficients wet = mobility(s, &p, true);
  double total = 0.0;

  if (spec_.q_w) {
    const auto& rule = space_->cell_rule();
    for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
      const Point inside = mesh.centroid(c);
      for (std::size_t q = 0; q < rule.size(); ++q) {
        total += rule.weights[q] * space_->det_j(c) * spec_.q_w(space_->to_physical(c, rule.points[q]), inside);
      }
    }
  }
  const auto& rule = space_->edge_rule();
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    const std::size_t cell = edge.cells[0];
    const Point inside = mesh.centroid(cell);
    if (edge.cls == EdgeClass::Fracture && spec_.qf_w) {
      const Point fin = mesh.centroid(edge.side_cells[0]);
      for (std::size_t q = 0; q < rule.size(); ++q) {
        total += rule.weights[q] * edge.length * spec_.qf_w(edge_point(mesh, edge, rule.points[q]), fin);
      }
    } else if (edge.cls == EdgeClass::Neumann) {
      for (std::size_t q = 0; q < rule.size(); ++q) {
        total += rule.weights[q] * edge.length * wet.neumann_flux(e, edge_point(mesh, edge, rule.points[q]));
      }
    } else if (edge.cls == EdgeClass::Dirichlet) {
      const double alpha = edge_penalty(spec_.pressure.alpha0, k, edge.length);
      const int region = mesh.cells()[cell].region;
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const Point x = edge_point(mesh, edge, rule.points[q]);
        const double w = rule.weights[q] * edge.length;
        const bool in = edge_inflow(p, e, x);
        const double sv = value_at(s, cell, x);
        const double lam = spec_.lambda_w(in ? sd : sv);
        const double gd = spec_.pressure.dirichlet ? spec_.pressure.dirichlet(x, inside) : 0.0;
        const double flux = lam * dot(spec_.pressure.K(x, region).apply(gradient_at(p, cell, x)), edge.normal);
        double v = flux - alpha * lam * (value_at(p, cell, x) - gd);
        if (in) v -= beta * (sv - sd);
        total += w * v;
      }
    }
  }
  const auto& records = mesh.fracture_vertices();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto* bc = std::get_if<BoundaryCoupling>(&records[r].coupling);
    if (!bc || !bc->dirichlet) continue;
    const auto& f = mesh.features()[records[r].feature];
    const Point P = mesh.vertices()[records[r].vertex];
    const double pen = edge_penalty(spec_.pressure.alpha_tilde0, k, bc->h_e);
    const Point tangent = mesh.edges()[bc->edge].tangent;
    for (int side = 0; side < 2; ++side) {
      const std::size_t cell = bc->cells[side];
      const BasisTable& tab = space_->corner_table(space_->corner_of(cell, records[r].vertex));
      const bool in = vertex_inflow(p, r, side);
      const double sv = trace(s, cell, tab.val[0].data());
      const double lam = spec_.lambda_w(in ? sd : sv);
      const double gd = spec_.pressure.dirichlet ? spec_.pressure.dirichlet(P, mesh.centroid(cell)) : 0.0;
      const double dp = dot(gradient(p, cell, tab.ref_grad[0].data()), tangent);
      double v = 0.5 * f.aperture * f.permeability * lam * dp * bc->sign -
                 pen * lam * (trace(p, cell, tab.val[0].data()) - gd);
      if (in) v -= beta_tilde * (sv - sd);
      total += v;
    }
  }
  return total;
}

SparseMatrix TwoPhaseSolver::mass_matrix() const {
  const Mesh& mesh = space_->mesh();
  const int n = space_->n_local();
  const auto& rule = space_->edge_rule();
  BlockMatrix m(*space_);
  std::array<double, kMaxLocal * kMaxLocal> block{};
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    block.fill(0.0);
    for (int i = 0; i < n; ++i) block[i * kMaxLocal + i] = spec_.phi_m * space_->det_j(c);
    m.add(c, c, block.data());
  }
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    if (edge.cls != EdgeClass::Fracture) continue;
    const double aphi = 0.5 * mesh.features()[edge.feature].aperture * spec_.phi_f;
    for (int s = 0; s < 2; ++s) {
      const BasisTable& tab = space_->trace_table(e, s);
      block.fill(0.0);
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double w = aphi * rule.weights[q] * edge.length;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) block[i * kMaxLocal + j] += w * tab.val[q][i] * tab.val[q][j];
        }
      }
      m.add(edge.cells[s], edge.cells[s], block.data());
    }
  }
  SparseMatrix out = std::move(m.matrix());
  out.prune(0.0);
  return out;
}

Eigen::VectorXd TwoPhaseSolver::apply_mass_inverse(const Eigen::VectorXd& r) const {
  const int n = space_->n_local();
  Eigen::VectorXd x(r.size());
  for (std::size_t c = 0; c < mass_inv_.size(); ++c) {
    const auto o = static_cast<Eigen::Index>(space_->dof(c, 0));
    x.segment(o, n).noalias() = mass_inv_[c] * r.segment(o, n);
  }
  return x;
}

double TwoPhaseSolver::cell_mass(std::size_t cell, const Eigen::VectorXd& s) const {
  const int n = space_->n_local();
  return unit_mass_[cell].dot(s.segment(static_cast<Eigen::Index>(space_->dof(cell, 0)), n));
}

double TwoPhaseSolver::wetting_mass(const Eigen::VectorXd& s) const {
  double m = 0.0;
  for (std::size_t c = 0; c < capacity_.size(); ++c) m += cell_mass(c, s);
  return m;
}

double TwoPhaseSolver::cfl_dt(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const {
  const Mesh& mesh = space_->mesh();
  const double cfl = spec_.cfl_number(space_->degree());
  const auto& rule = space_->edge_rule();
  double dt = spec_.dt_max;
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const Cell& cell = mesh.cells()[c];
    double speed = 0.0;
    for (int l = 0; l < 3; ++l) {
      const std::size_t e = cell.edges[l];
      const Edge& edge = mesh.edges()[e];
      const BasisTable& tab = space_->trace_table(e, side_index(edge, c));
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const Point x = edge_point(mesh, edge, rule.points[q]);
        const Point g = spec_.pressure.K(x, cell.region).apply(gradient(p, c, tab.ref_grad[q].data()));
        const double ds = spec_.dlambda_w(trace(s, c, tab.val[q].data()));
        speed = std::max(speed, std::abs(ds * dot(g, edge.normal)));
      }
    }
    if (speed > 0.0) dt = std::min(dt, cfl * mesh.diameter(c) * spec_.phi_m / speed);
  }
  for (std::size_t e = 0; e < mesh.num_edges(); ++e) {
    const Edge& edge = mesh.edges()[e];
    if (edge.cls != EdgeClass::Fracture) continue;
    const auto& f = mesh.features()[edge.feature];
    for (int side = 0; side < 2; ++side) {
      const std::size_t c = edge.cells[side];
      const BasisTable& tab = space_->trace_table(e, side);
      double flux = 0.0;
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double d = dot(gradient(p, c, tab.ref_grad[q].data()), edge.tangent);
        const double ds = spec_.dlambda_w(trace(s, c, tab.val[q].data()));
        flux = std::max(flux, std::abs(ds * f.aperture * f.permeability * d));
      }
      if (flux > 0.0) dt = std::min(dt, cfl * capacity_[c] / flux);
    }
  }
  return dt;
}

LimiterReport TwoPhaseSolver::tvb_limit(Eigen::VectorXd& s) const {
  LimiterReport rep;
  if (space_->degree() == 0) return rep;
  const Mesh& mesh = space_->mesh();
  const int n = space_->n_local();
  const std::size_t nc = mesh.num_cells();
  constexpr double nu = 1.5;
  std::vector<double> mean(nc);
  for (std::size_t c = 0; c < nc; ++c) mean[c] = s[static_cast<Eigen::Index>(space_->dof(c, 0))] * ReferenceBasis::constant_mode();

  const auto& cell_val = space_->cell_table().val;
  const auto& cell_rule = space_->cell_rule();
  for (std::size_t c = 0; c < nc; ++c) {
    const Cell& cell = mesh.cells()[c];
    const Point b0 = mesh.centroid(c);
    const double u0 = mean[c];
    std::array<Point, 3> b{};
    std::array<double, 3> u{};
    std::array<Point, 3> mid{};
    for (int l = 0; l < 3; ++l) {
      const Edge& edge = mesh.edges()[cell.edges[l]];
      mid[l] = edge.midpoint;
      if (neighbours_[c][l] != kNone) {
        b[l] = mesh.centroid(neighbours_[c][l]);
        u[l] = mean[neighbours_[c][l]];
      } else {
        b[l] = b0 + 2.0 * dot(edge.midpoint - b0, edge.normal) * edge.normal;
        u[l] = u0;
      }
    }
    // The floor keeps roundoff-level slopes of flat data untouched.
    const double threshold = std::max(spec_.tvb_m * mesh.diameter(c) * mesh.diameter(c), 1e-13);
    std::array<double, 3> delta{}, limited{};
    bool changed = false;
    for (int l = 0; l < 3; ++l) {
      const Point m = mid[l] - b0;
      double bar = 0.0;
      bool found = false;
      for (int o = 1; o <= 2 && !found; ++o) {
        const int k = (l + o) % 3;
        const Point d1 = b[l] - b0, d2 = b[k] - b0;
        const double det = d1.x * d2.y - d1.y * d2.x;
        if (std::abs(det) < 1e-14 * norm(d1) * norm(d2)) continue;
        const double a1 = (m.x * d2.y - m.y * d2.x) / det;
        const double a2 = (d1.x * m.y - d1.y * m.x) / det;
        if (a1 >= -1e-12 && a2 >= -1e-12) {
          bar = a1 * (u[l] - u0) + a2 * (u[k] - u0);
          found = true;
        }
      }
      if (!found) {
        const Point d1 = b[l] - b0;
        bar = (u[l] - u0) * dot(m, d1) / dot(d1, d1);
      }
      delta[l] = trace(s, c, midpoints_.val[l].data()) - u0;
      limited[l] = std::abs(delta[l]) <= threshold ? delta[l] : minmod(delta[l], nu * bar);
      if (limited[l] != delta[l]) changed = true;
    }
    // A quadratic or higher remainder is also dropped when the linear part is kept.
    if (!changed) continue;
    double pos = 0.0, neg = 0.0;
    for (double d : limited) {
      pos += std::max(0.0, d);
      neg += std::max(0.0, -d);
    }
    if (pos > 0.0 && neg > 0.0) {
      const double tp = std::min(1.0, neg / pos), tn = std::min(1.0, pos / neg);
      for (double& d : limited) d = d > 0.0 ? tp * d : tn * d;
    } else {
      limited.fill(0.0);
    }
    const double before = cell_mass(c, s);
    const auto o = static_cast<Eigen::Index>(space_->dof(c, 0));
    std::array<double, kMaxLocal> coef{};
    for (std::size_t q = 0; q < cell_rule.size(); ++q) {
      const Point xi = cell_rule.points[q];
      const std::array<double, 3> bary{1.0 - xi.x - xi.y, xi.x, xi.y};
      double v = u0;
      for (int l = 0; l < 3; ++l) v += limited[l] * (1.0 - 2.0 * bary[(l + 2) % 3]);
      for (int j = 0; j < n; ++j) coef[j] += cell_rule.weights[q] * v * cell_val[q][j];
    }
    for (int j = 0; j < n; ++j) s[o + j] = coef[j];
    s[o] += (before - cell_mass(c, s)) / capacity_[c] / ReferenceBasis::constant_mode();
    ++rep.cells_limited;
  }
  return rep;
}

LimiterReport TwoPhaseSolver::bound_limit(Eigen::VectorXd& s) const {
  LimiterReport rep;
  const int n = space_->n_local();
  for (std::size_t c = 0; c < capacity_.size(); ++c) {
    const auto o = static_cast<Eigen::Index>(space_->dof(c, 0));
    const double mbar = cell_mass(c, s) / capacity_[c];
    if (mbar < 0.0 || mbar > 1.0) {
      const double target = std::clamp(mbar, 0.0, 1.0);
      s.segment(o, n).setZero();
      s[o] = target / ReferenceBasis::constant_mode();
      rep.clamp_mass += (target - mbar) * capacity_[c];
      ++rep.cells_clamped;
      ++rep.cells_limited;
      continue;
    }
    double lo = mbar, hi = mbar;
    for (const auto& v : checks_.val) {
      const double x = trace(s, c, v.data());
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (lo >= 0.0 && hi <= 1.0) continue;
    double theta = 1.0;
    if (hi > 1.0) theta = std::min(theta, (1.0 - mbar) / (hi - mbar));
    if (lo < 0.0) theta = std::min(theta, mbar / (mbar - lo));
    s.segment(o, n) *= theta;
    s[o] += (1.0 - theta) * mbar / ReferenceBasis::constant_mode();
    ++rep.cells_limited;
  }
  return rep;
}

std::pair<double, double> TwoPhaseSolver::range(const Eigen::VectorXd& s) const {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t c = 0; c < capacity_.size(); ++c) {
    for (const auto& v : checks_.val) {
      const double x = trace(s, c, v.data());
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  return {lo, hi};
}

void TwoPhaseSolver::limit(Eigen::VectorXd& s, LimiterReport& rep) const {
  if (spec_.tvb_limiter) rep.cells_limited += tvb_limit(s).cells_limited;
  if (spec_.bound_limiter) {
    const LimiterReport b = bound_limit(s);
    rep.cells_limited += b.cells_limited;
    rep.cells_clamped += b.cells_clamped;
    rep.clamp_mass += b.clamp_mass;
  }
}

StepReport TwoPhaseSolver::step(TwoPhaseState& state, double dt) {
  if (!(dt > 0.0)) throw Error("time step must be positive");
  StepReport rep;
  rep.dt = dt;
  rep.mass_before = wetting_mass(state.s);
  const std::size_t f0 = factorizations_;
  std::array<double, 3> balance{}, clamp{};
  const Eigen::VectorXd p0 = state.p;
  auto f = [&](const Eigen::VectorXd& s, int stage) -> Eigen::VectorXd {
    const Eigen::VectorXd p = stage == 0 ? p0 : solve_pressure(s, &p0);
    balance[stage] = boundary_balance(p, s);
    return apply_mass_inverse(saturation_rhs(p, s));
  };
  auto lim = [&](Eigen::VectorXd& s, int stage) {
    LimiterReport lr;
    limit(s, lr);
    clamp[stage] = lr.clamp_mass;
    rep.cells_limited += lr.cells_limited;
  };
  state.s = ssp_rk3(state.s, dt, f, lim);
  state.p = solve_pressure(state.s, &p0);
  state.time += dt;
  ++state.step;

  rep.time = state.time;
  rep.mass_after = wetting_mass(state.s);
  rep.boundary_change = dt * (balance[0] / 6.0 + balance[1] / 6.0 + 2.0 * balance[2] / 3.0);
  rep.clamp_change = clamp[0] / 6.0 + 2.0 * clamp[1] / 3.0 + clamp[2];
  const double scale = std::max({std::abs(rep.mass_before), std::abs(rep.mass_after),
                                 dt * (std::abs(balance[0]) + std::abs(balance[1]) + std::abs(balance[2]))});
  const double defect = rep.mass_after - rep.mass_before - rep.boundary_change - rep.clamp_change;
  rep.balance_residual = scale > 0.0 ? std::abs(defect) / scale : std::abs(defect);
  std::tie(rep.s_min, rep.s_max) = range(state.s);
  rep.factorizations = factorizations_ - f0;
  return rep;
}

void TwoPhaseSolver::run(TwoPhaseState& state,
                         const std::function<void(const TwoPhaseState&, const StepReport&)>& observer) {
  const double end = spec_.end_time;
  while (state.time < end * (1.0 - 1e-12)) {
    double dt = cfl_dt(state.p, state.s);
    if (!std::isfinite(dt)) dt = end - state.time;
    dt = std::min(dt, end - state.time);
    const StepReport rep = step(state, dt);
    if (!state.s.allFinite()) throw Error("saturation became non-finite at t = " + std::to_string(state.time));
    if (observer) observer(state, rep);
  }
}

namespace {

constexpr char kMagic[8] = {'D', 'F', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(char* buf, std::size_t& at, T v) {
  std::memcpy(buf + at, &v, sizeof v);
  at += sizeof v;
}

template <class T>
T get(const char* buf, std::size_t& at) {
  T v;
  std::memcpy(&v, buf + at, sizeof v);
  at += sizeof v;
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const DGSpace& space, const TwoPhaseState& state) {
  const std::size_t n = space.n_dofs();
  if (static_cast<std::size_t>(state.s.size()) != n || static_cast<std::size_t>(state.p.size()) != n) {
    throw Error("checkpoint state does not match the space");
  }
  char header[64] = {};
  std::size_t at = 0;
  std::memcpy(header, kMagic, sizeof kMagic);
  at += sizeof kMagic;
  put<std::uint32_t>(header, at, kVersion);
  put<std::uint32_t>(header, at, static_cast<std::uint32_t>(space.degree()));
  put<std::uint64_t>(header, at, space.mesh().num_cells());
  put<std::uint64_t>(header, at, space.mesh().hash());
  put<double>(header, at, state.time);
  put<std::uint64_t>(header, at, state.step);
  put<std::uint64_t>(header, at, n);
  out.write(header, sizeof header);
  out.write(reinterpret_cast<const char*>(state.s.data()), static_cast<std::streamsize>(n * sizeof(double)));
  out.write(reinterpret_cast<const char*>(state.p.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw Error("failed to write checkpoint");
}

TwoPhaseState read_checkpoint(std::istream& in, const DGSpace& space) {
  char header[64];
  if (!in.read(header, sizeof header)) throw Error("checkpoint: truncated header");
  if (std::memcmp(header, kMagic, sizeof kMagic) != 0) throw Error("checkpoint: bad magic");
  std::size_t at = sizeof kMagic;
  const auto version = get<std::uint32_t>(header, at);
  if (version != kVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto degree = get<std::uint32_t>(header, at);
  const auto cells = get<std::uint64_t>(header, at);
  const auto hash = get<std::uint64_t>(header, at);
  TwoPhaseState st;
  st.time = get<double>(header, at);
  st.step = get<std::uint64_t>(header, at);
  const auto n = get<std::uint64_t>(header, at);
  std::ostringstream why;
  if (degree != static_cast<std::uint32_t>(space.degree())) {
    why << "degree " << degree << " != " << space.degree();
  } else if (cells != space.mesh().num_cells()) {
    why << "cell count " << cells << " != " << space.mesh().num_cells();
  } else if (hash != space.mesh().hash()) {
    why << "mesh hash differs";
  } else if (n != space.n_dofs()) {
    why << "dof count " << n << " != " << space.n_dofs();
  }
  if (!why.str().empty()) throw Error("checkpoint does not match the mesh: " + why.str());
  st.s.resize(static_cast<Eigen::Index>(n));
  st.p.resize(static_cast<Eigen::Index>(n));
  if (!in.read(reinterpret_cast<char*>(st.s.data()), static_cast<std::streamsize>(n * sizeof(double))) ||
      !in.read(reinterpret_cast<char*>(st.p.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw Error("checkpoint: truncated data");
  }
  return st;
}

}  // namespace dfm
