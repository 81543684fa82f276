#include "dfm/dg_basis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <numbers>
#include <stdexcept>

#include "dfm/error.hpp"

namespace dfm {

LineRule gauss_legendre(int n) {
  if (n < 1) throw Error("Gauss-Legendre rule needs at least one point");
  LineRule rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Newton on P_n starting from the Chebyshev-like guess.
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) {
        p1 = x;
        p0 = 1.0;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.points[n - 1 - i] = 0.5 * (x + 1.0);
    rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

QuadratureRule triangle_rule(int order) {
  // (u, v) ↦ (u(1−v), v) with Jacobian (1−v); integrand degree order in u, order+1 in v.
  const int n = std::max(1, (order + 2 + 1) / 2);
  const LineRule g = gauss_legendre(n);
  QuadratureRule rule;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double u = g.points[i], v = g.points[j];
      rule.points.push_back({u * (1.0 - v), v});
      rule.weights.push_back(g.weights[i] * g.weights[j] * (1.0 - v));
    }
  }
  return rule;
}

namespace {

/// Scalar carrying d/dr and d/ds.
struct Dual {
  double v = 0.0, r = 0.0, s = 0.0;
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.r + b.r, a.s + b.s}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.r - b.r, a.s - b.s}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.v * b.v, a.r * b.v + a.v * b.r, a.s * b.v + a.v * b.s};
}
inline Dual operator*(double c, Dual a) { return {c * a.v, c * a.r, c * a.s}; }

template <class T>
T make_const(double c) {
  if constexpr (std::is_same_v<T, Dual>) {
    return Dual{c, 0.0, 0.0};
  } else {
    return c;
  }
}

/// Evaluates every mode. Uses the scaled Legendre recurrence in x = 2r+s−1, t = 1−s, which is
/// polynomial in (r, s) and has no collapsed-coordinate singularity.
template <class T>
void dubiner(int k, const std::vector<std::array<int, 2>>& pq, T r, T s, T* out) {
  const T one = make_const<T>(1.0);
  const T x = 2.0 * r + s - one;
  const T t = one - s;
  const T b = 2.0 * s - one;
  std::array<T, ReferenceBasis::kMaxDegree + 1> leg{};
  leg[0] = one;
  if (k >= 1) leg[1] = x;
  for (int n = 1; n < k; ++n) {
    leg[n + 1] = (1.0 / (n + 1)) * ((2.0 * n + 1.0) * (x * leg[n]) - static_cast<double>(n) * (t * t * leg[n - 1]));
  }
  // Jacobi P_q^{(2p+1,0)}(b) for each p.
  std::array<std::array<T, ReferenceBasis::kMaxDegree + 1>, ReferenceBasis::kMaxDegree + 1> jac{};
  for (int p = 0; p <= k; ++p) {
    const double a = 2.0 * p + 1.0;
    jac[p][0] = one;
    if (k - p >= 1) jac[p][1] = 0.5 * ((a + 2.0) * b + make_const<T>(a));
    for (int n = 2; n <= k - p; ++n) {
      const double c0 = 2.0 * n * (n + a) * (2.0 * n + a - 2.0);
      const double c1 = (2.0 * n + a - 1.0);
      const double c2 = 2.0 * (n + a - 1.0) * (n - 1.0) * (2.0 * n + a);
      jac[p][n] = (1.0 / c0) * (c1 * ((2.0 * n + a) * (2.0 * n + a - 2.0) * b + make_const<T>(a * a)) * jac[p][n - 1]) -
                  (c2 / c0) * jac[p][n - 2];
    }
  }
  for (std::size_t i = 0; i < pq.size(); ++i) {
    const int p = pq[i][0], q = pq[i][1];
    const double norm = std::sqrt(2.0 * (2.0 * p + 1.0) * (p + q + 1.0));
    out[i] = norm * (leg[p] * jac[p][q]);
  }
}

}  // namespace

ReferenceBasis::ReferenceBasis(int degree) : degree_(degree) {
  if (degree < 0 || degree > kMaxDegree) {
    throw Error("polynomial degree must be between 0 and " + std::to_string(kMaxDegree));
  }
  for (int n = 0; n <= degree; ++n) {
    for (int q = 0; q <= n; ++q) {
      pq_.push_back({n - q, q});
      mode_degree_.push_back(n);
    }
  }
  size_ = static_cast<int>(pq_.size());
}

void ReferenceBasis::eval(Point xi, double* values) const {
  dubiner<double>(degree_, pq_, xi.x, xi.y, values);
}

void ReferenceBasis::eval(Point xi, double* values, Point* grads) const {
  std::array<Dual, (kMaxDegree + 1) * (kMaxDegree + 2) / 2> d{};
  dubiner<Dual>(degree_, pq_, Dual{xi.x, 1.0, 0.0}, Dual{xi.y, 0.0, 1.0}, d.data());
  for (int i = 0; i < size_; ++i) {
    values[i] = d[i].v;
    grads[i] = {d[i].r, d[i].s};
  }
}

DGSpace::DGSpace(const Mesh& mesh, int degree)
    : mesh_(&mesh),
      basis_(degree),
      cell_rule_(triangle_rule(2 * degree + 2)),
      error_rule_(triangle_rule(2 * degree + 6)),
      edge_rule_(gauss_legendre(degree + 2)) {
  maps_.resize(mesh.num_cells());
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const auto& v = mesh.cells()[c].vertices;
    const Point a = mesh.vertices()[v[0]];
    const Point e1 = mesh.vertices()[v[1]] - a;
    const Point e2 = mesh.vertices()[v[2]] - a;
    const double det = cross(e1, e2);
    Map& m = maps_[c];
    m.origin = a;
    m.jinv[0][0] = e2.y / det;
    m.jinv[0][1] = -e2.x / det;
    m.jinv[1][0] = -e1.y / det;
    m.jinv[1][1] = e1.x / det;
  }

  auto tabulate = [this](const std::vector<Point>& pts) {
    BasisTable t;
    t.val.resize(pts.size());
    t.ref_grad.resize(pts.size());
    for (std::size_t q = 0; q < pts.size(); ++q) basis_.eval(pts[q], t.val[q].data(), t.ref_grad[q].data());
    return t;
  };
  cell_table_ = tabulate(cell_rule_.points);
  const std::array<Point, 3> corner{Point{0, 0}, Point{1, 0}, Point{0, 1}};
  for (int l = 0; l < 3; ++l) {
    for (int rev = 0; rev < 2; ++rev) {
      std::vector<Point> pts;
      for (double t : edge_rule_.points) {
        const double u = rev ? 1.0 - t : t;
        pts.push_back(corner[l] + u * (corner[(l + 1) % 3] - corner[l]));
      }
      edge_tables_[l * 2 + rev] = tabulate(pts);
    }
    corner_tables_[l] = tabulate({corner[l]});
  }

  std::vector<std::set<std::size_t>> cols(mesh.num_cells());
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) cols[c].insert(c);
  for (const Edge& e : mesh.edges()) {
    if (e.is_boundary()) continue;
    cols[e.cells[0]].insert(e.cells[1]);
    cols[e.cells[1]].insert(e.cells[0]);
  }
  for (const FractureVertex& rec : mesh.fracture_vertices()) {
    if (const auto* ic = std::get_if<InteriorCoupling>(&rec.coupling)) {
      for (const auto& pair : ic->cells) {
        cols[pair[0]].insert(pair[1]);
        cols[pair[1]].insert(pair[0]);
      }
    }
  }
  block_cols_.resize(mesh.num_cells());
  const int n = basis_.size();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) block_cols_[c].assign(cols[c].begin(), cols[c].end());
  const auto dim = static_cast<Eigen::Index>(n_dofs());
  pattern_.resize(dim, dim);
  Eigen::VectorXi per_row(dim);
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    for (int i = 0; i < n; ++i) per_row[static_cast<Eigen::Index>(dof(c, i))] = static_cast<int>(block_cols_[c].size()) * n;
  }
  pattern_.reserve(per_row);
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    for (int i = 0; i < n; ++i) {
      for (std::size_t col : block_cols_[c]) {
        for (int j = 0; j < n; ++j) {
          pattern_.insert(static_cast<Eigen::Index>(dof(c, i)), static_cast<Eigen::Index>(dof(col, j))) = 0.0;
        }
      }
    }
  }
  pattern_.makeCompressed();
}

const BasisTable& DGSpace::trace_table(std::size_t edge, int side) const {
  const Edge& e = mesh_->edges()[edge];
  const std::size_t cell = e.cells[side];
  const int l = e.local[side];
  const bool reversed = mesh_->cells()[cell].vertices[l] != e.vertices[0];
  return edge_table(l, reversed);
}

int DGSpace::corner_of(std::size_t cell, std::size_t vertex) const {
  const auto& v = mesh_->cells()[cell].vertices;
  for (int i = 0; i < 3; ++i) {
    if (v[i] == vertex) return i;
  }
  throw Error("vertex " + std::to_string(vertex) + " is not a corner of cell " + std::to_string(cell));
}

Point DGSpace::to_physical(std::size_t cell, Point ref) const {
  const auto& v = mesh_->cells()[cell].vertices;
  const Point a = mesh_->vertices()[v[0]];
  return a + ref.x * (mesh_->vertices()[v[1]] - a) + ref.y * (mesh_->vertices()[v[2]] - a);
}

Point DGSpace::to_reference(std::size_t cell, Point x) const {
  const Map& m = maps_[cell];
  const Point d = x - m.origin;
  return {m.jinv[0][0] * d.x + m.jinv[0][1] * d.y, m.jinv[1][0] * d.x + m.jinv[1][1] * d.y};
}

Point DGSpace::physical_gradient(std::size_t cell, Point g) const {
  // ∇_x = J^{-T} ∇_ξ
  const Map& m = maps_[cell];
  return {m.jinv[0][0] * g.x + m.jinv[1][0] * g.y, m.jinv[0][1] * g.x + m.jinv[1][1] * g.y};
}

void DGSpace::eval_basis(std::size_t cell, Point x, double* values, Point* grads) const {
  const Point xi = to_reference(cell, x);
  if (!grads) {
    basis_.eval(xi, values);
    return;
  }
  basis_.eval(xi, values, grads);
  for (int i = 0; i < n_local(); ++i) grads[i] = physical_gradient(cell, grads[i]);
}

DGField::DGField(const DGSpace& space)
    : space_(&space), coeffs_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.n_dofs()))) {}

DGField::DGField(const DGSpace& space, Eigen::VectorXd coeffs)
    : space_(&space), coeffs_(std::move(coeffs)) {
  if (static_cast<std::size_t>(coeffs_.size()) != space.n_dofs()) {
    throw Error("coefficient vector does not match the space dimension");
  }
}

void DGField::check_inside(std::size_t cell, Point x) const {
  const auto bc = space_->mesh().barycentric(cell, x);
  for (double l : bc) {
    if (l < -1e-8) {
      throw Error("point (" + std::to_string(x.x) + ", " + std::to_string(x.y) +
                  ") is outside cell " + std::to_string(cell));
    }
  }
}

double DGField::value_unchecked(std::size_t cell, Point x) const {
  std::array<double, 32> phi{};
  space_->eval_basis(cell, x, phi.data());
  double v = 0.0;
  for (int i = 0; i < space_->n_local(); ++i) v += coeff(cell, i) * phi[i];
  return v;
}

Point DGField::gradient_unchecked(std::size_t cell, Point x) const {
  std::array<double, 32> phi{};
  std::array<Point, 32> grad{};
  space_->eval_basis(cell, x, phi.data(), grad.data());
  Point g;
  for (int i = 0; i < space_->n_local(); ++i) g = g + coeff(cell, i) * grad[i];
  return g;
}

double DGField::value(std::size_t cell, Point x) const {
  check_inside(cell, x);
  return value_unchecked(cell, x);
}

Point DGField::gradient(std::size_t cell, Point x) const {
  check_inside(cell, x);
  return gradient_unchecked(cell, x);
}

double DGField::tangential_derivative(std::size_t edge, Side side, double t) const {
  const Edge& e = space_->mesh().edges()[edge];
  if (e.cls != EdgeClass::Fracture) throw Error("tangential derivative requested off a fracture");
  const std::size_t cell = e.side_cells[static_cast<int>(side)];
  if (cell == kNone) throw Error("fracture edge has no side label");
  const Point a = space_->mesh().vertices()[e.vertices[0]];
  const Point b = space_->mesh().vertices()[e.vertices[1]];
  return dot(gradient_unchecked(cell, a + t * (b - a)), e.tangent);
}

DGField project(const DGSpace& space, const ScalarFn& f) {
  DGField out(space);
  const auto& rule = space.error_rule();
  const int n = space.n_local();
  std::vector<double> phi(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> table(rule.size(), std::vector<double>(n));
  for (std::size_t q = 0; q < rule.size(); ++q) space.basis().eval(rule.points[q], table[q].data());
  for (std::size_t c = 0; c < space.mesh().num_cells(); ++c) {
    const Point inside = space.mesh().centroid(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double fx = f(space.to_physical(c, rule.points[q]), inside);
      // reference mass matrix is the identity
      for (int i = 0; i < n; ++i) out.coeffs()[space.dof(c, i)] += rule.weights[q] * fx * table[q][i];
    }
  }
  return out;
}

L2Errors l2_errors(const DGField& field, const ScalarFn& exact, const VectorFn& exact_grad) {
  const DGSpace& space = field.space();
  const auto& rule = space.error_rule();
  const int n = space.n_local();
  std::vector<std::vector<double>> val(rule.size(), std::vector<double>(n));
  std::vector<std::vector<Point>> grad(rule.size(), std::vector<Point>(n));
  for (std::size_t q = 0; q < rule.size(); ++q) {
    space.basis().eval(rule.points[q], val[q].data(), grad[q].data());
  }
  double l2 = 0.0, h1 = 0.0;
  for (std::size_t c = 0; c < space.mesh().num_cells(); ++c) {
    const Point inside = space.mesh().centroid(c);
    const double det = space.det_j(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = space.to_physical(c, rule.points[q]);
      double uh = 0.0;
      Point gref;
      for (int i = 0; i < n; ++i) {
        const double ci = field.coeff(c, i);
        uh += ci * val[q][i];
        gref = gref + ci * grad[q][i];
      }
      const double e = exact(x, inside) - uh;
      const Point ge = exact_grad(x, inside) - space.physical_gradient(c, gref);
      l2 += rule.weights[q] * det * e * e;
      h1 += rule.weights[q] * det * dot(ge, ge);
    }
  }
  return {std::sqrt(l2), std::sqrt(h1)};
}

}  // namespace dfm
