#pragma once
// Brute-force dense evaluation of the discrete forms. Geometry, orientation and fracture-vertex
// classification are recomputed here from raw connectivity; every basis function is treated as
// a global function that vanishes outside its cell.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "dfm/assembly.hpp"

namespace oracle {

using dfm::Point;

struct Mobility {
  /// Weight of a cell's own trace.
  std::function<double(std::size_t cell, Point x)> cell;
  /// Weight on a Dirichlet edge (dir = outward normal) or at a Dirichlet fracture vertex
  /// (dir = outward fracture tangent, vertex = true).
  std::function<double(std::size_t cell, Point x, Point dir, bool vertex)> boundary;
  /// Replaces the Neumann datum.
  std::function<double(std::size_t cell, Point x)> neumann;
  double at(std::size_t c, Point x) const { return cell ? cell(c, x) : 1.0; }
  double at_boundary(std::size_t c, Point x, Point dir, bool vertex) const {
    return boundary ? boundary(c, x, dir, vertex) : at(c, x);
  }
};

struct Dense {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

inline Point centroid(const dfm::Mesh& m, std::size_t c) {
  const auto& v = m.cells()[c].vertices;
  return (1.0 / 3.0) * (m.vertices()[v[0]] + m.vertices()[v[1]] + m.vertices()[v[2]]);
}

/// Basis of every dof evaluated from cell c at x (zero outside c's block).
struct Global {
  Eigen::VectorXd v, gx, gy;
};

inline Global global(const dfm::DGSpace& sp, std::size_t c, Point x) {
  const int n = sp.n_local();
  Global g{Eigen::VectorXd::Zero(sp.n_dofs()), Eigen::VectorXd::Zero(sp.n_dofs()),
           Eigen::VectorXd::Zero(sp.n_dofs())};
  std::vector<double> val(n);
  std::vector<Point> grad(n);
  sp.eval_basis(c, x, val.data(), grad.data());
  for (int i = 0; i < n; ++i) {
    g.v[sp.dof(c, i)] = val[i];
    g.gx[sp.dof(c, i)] = grad[i].x;
    g.gy[sp.dof(c, i)] = grad[i].y;
  }
  return g;
}

/// K∇φ·n for every dof, scaled by lam.
inline Eigen::VectorXd flux(const Global& g, const dfm::Tensor2& K, Point n, double lam) {
  const Point kn = K.apply(n);  // K symmetric
  return lam * (kn.x * g.gx + kn.y * g.gy);
}

inline Eigen::VectorXd directional(const Global& g, Point d) { return d.x * g.gx + d.y * g.gy; }

struct Segment {
  Point a, b;
  double length() const { return dfm::norm(b - a); }
  Point at(double t) const { return a + t * (b - a); }
};

inline Segment segment(const dfm::Mesh& m, const dfm::Edge& e) {
  return {m.vertices()[e.vertices[0]], m.vertices()[e.vertices[1]]};
}

/// Unit normal of the edge pointing away from cell c.
inline Point outward(const dfm::Mesh& m, const dfm::Edge& e, std::size_t c) {
  const Segment s = segment(m, e);
  Point n = dfm::normalized(Point{(s.b - s.a).y, -(s.b - s.a).x});
  if (dfm::dot(n, s.at(0.5) - centroid(m, c)) < 0) n = -1.0 * n;
  return n;
}

inline Point feature_tangent(const dfm::Mesh& m, int f) {
  return dfm::normalized(m.features()[f].end - m.features()[f].start);
}

/// 0 for the − side (rot90(ν) points away from the cell), 1 for +.
inline int side_of(const dfm::Mesh& m, const dfm::Edge& e, std::size_t c) {
  const Point nu = feature_tangent(m, e.feature);
  return dfm::dot(dfm::rot90(nu), centroid(m, c) - segment(m, e).at(0.5)) < 0 ? 0 : 1;
}

inline std::size_t cell_on_side(const dfm::Mesh& m, const dfm::Edge& e, int side) {
  return side_of(m, e, e.cells[0]) == side ? e.cells[0] : e.cells[1];
}

/// Fracture vertex with coupling, rebuilt from edge classes.
struct OracleVertex {
  std::size_t vertex;
  int feature;
  bool interior;
  std::size_t e1, e2;  // e2 unused at boundary vertices
  double h;            // h_⋆ or h_e
  double sign;         // boundary only
};

inline std::vector<OracleVertex> fracture_vertices(const dfm::Mesh& m) {
  std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> inc;
  std::set<std::size_t> on_barrier, on_boundary, on_dirichlet;
  for (std::size_t e = 0; e < m.num_edges(); ++e) {
    const auto& ed = m.edges()[e];
    for (std::size_t v : ed.vertices) {
      if (ed.cls == dfm::EdgeClass::Fracture) inc[{ed.feature, v}].push_back(e);
      if (ed.cls == dfm::EdgeClass::Barrier) on_barrier.insert(v);
      if (ed.is_boundary()) on_boundary.insert(v);
      if (ed.cls == dfm::EdgeClass::Dirichlet) on_dirichlet.insert(v);
    }
  }
  std::vector<OracleVertex> out;
  for (const auto& [key, edges] : inc) {
    const auto [f, v] = key;
    const Point P = m.vertices()[v];
    const Point nu = feature_tangent(m, f);
    auto other = [&](std::size_t e) {
      const auto& ed = m.edges()[e];
      return m.vertices()[ed.vertices[0] == v ? ed.vertices[1] : ed.vertices[0]];
    };
    if (edges.size() == 2) {
      if (m.intersection_rule() == dfm::IntersectionRule::BarrierPriority && on_barrier.count(v)) continue;
      std::size_t e1 = edges[0], e2 = edges[1];
      if (dfm::dot(other(e1) - P, nu) > 0) std::swap(e1, e2);
      out.push_back({v, f, true, e1, e2,
                     std::min(m.edges()[e1].length, m.edges()[e2].length), 0.0});
    } else if (edges.size() == 1 && on_dirichlet.count(v)) {
      const double sign = dfm::dot(P - other(edges[0]), nu) > 0 ? 1.0 : -1.0;
      out.push_back({v, f, false, edges[0], edges[0], m.edges()[edges[0]].length, sign});
    }
  }
  return out;
}

/// a_h + b_h and F_h + G_h with mobility weights.
inline Dense dense_forms(const dfm::DGSpace& sp, const dfm::ProblemSpec& spec, const Mobility& lam = {}) {
  const dfm::Mesh& m = sp.mesh();
  const int k = sp.degree();
  const double sigma = dfm::sigma(spec.scheme);
  const auto N = static_cast<Eigen::Index>(sp.n_dofs());
  Dense d{Eigen::MatrixXd::Zero(N, N), Eigen::VectorXd::Zero(N)};

  const dfm::QuadratureRule rule = dfm::triangle_rule(2 * k + 4);
  for (std::size_t c = 0; c < m.num_cells(); ++c) {
    const auto& cv = m.cells()[c].vertices;
    const Point a = m.vertices()[cv[0]], b = m.vertices()[cv[1]], e = m.vertices()[cv[2]];
    const double det = std::abs(dfm::cross(b - a, e - a));
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = a + rule.points[q].x * (b - a) + rule.points[q].y * (e - a);
      const double w = rule.weights[q] * det;
      const Global g = global(sp, c, x);
      const dfm::Tensor2 K = lam.at(c, x) * spec.K(x, m.cells()[c].region);
      d.A += w * (K.xx * g.gx * g.gx.transpose() + K.xy * g.gx * g.gy.transpose() +
                  K.yx * g.gy * g.gx.transpose() + K.yy * g.gy * g.gy.transpose());
      if (spec.source) d.b += w * spec.source(x, centroid(m, c)) * g.v;
    }
  }

  const dfm::LineRule line = dfm::gauss_legendre(k + 3);
  for (std::size_t ei = 0; ei < m.num_edges(); ++ei) {
    const dfm::Edge& e = m.edges()[ei];
    const Segment s = segment(m, e);
    const double alpha = spec.alpha0 * k * k / s.length();
    for (std::size_t q = 0; q < line.size(); ++q) {
      const Point x = s.at(line.points[q]);
      const double w = line.weights[q] * s.length();
      if (e.is_boundary()) {
        const std::size_t c = e.cells[0];
        const Point n = outward(m, e, c);
        const Global g = global(sp, c, x);
        if (e.cls == dfm::EdgeClass::Neumann) {
          if (lam.neumann) {
            d.b += w * lam.neumann(c, x) * g.v;
          } else if (spec.neumann) {
            d.b += w * spec.neumann(x, centroid(m, c)) * g.v;
          }
          continue;
        }
        const double l = lam.at_boundary(c, x, n, false);
        const Eigen::VectorXd fl = flux(g, spec.K(x, m.cells()[c].region), n, l);
        d.A += w * (-g.v * fl.transpose() + sigma * fl * g.v.transpose() + alpha * l * g.v * g.v.transpose());
        const double gd = spec.dirichlet ? spec.dirichlet(x, centroid(m, c)) : 0.0;
        d.b += w * (sigma * gd * fl + alpha * l * gd * g.v);
        continue;
      }
      const std::size_t c0 = e.cells[0], c1 = e.cells[1];
      const Point n = outward(m, e, c0);
      const Global g0 = global(sp, c0, x), g1 = global(sp, c1, x);
      const double l0 = lam.at(c0, x), l1 = lam.at(c1, x);
      const Eigen::VectorXd jump = g0.v - g1.v;
      if (e.cls == dfm::EdgeClass::Barrier) {
        const auto& f = m.features()[e.feature];
        d.A += w * 0.5 * (l0 + l1) * f.permeability / f.aperture * jump * jump.transpose();
        continue;
      }
      const Eigen::VectorXd avg = 0.5 * (flux(g0, spec.K(x, m.cells()[c0].region), n, l0) +
                                         flux(g1, spec.K(x, m.cells()[c1].region), n, l1));
      d.A += w * (-jump * avg.transpose() + sigma * avg * jump.transpose() +
                  alpha * 0.5 * (l0 + l1) * jump * jump.transpose());
      if (e.cls == dfm::EdgeClass::Fracture) {
        const auto& f = m.features()[e.feature];
        const Point nu = feature_tangent(m, e.feature);
        for (std::size_t c : {c0, c1}) {
          const Global& g = c == c0 ? g0 : g1;
          const Eigen::VectorXd dn = directional(g, nu);
          d.A += w * 0.5 * f.aperture * f.permeability * lam.at(c, x) * dn * dn.transpose();
        }
        if (spec.fracture_source) {
          d.b += w * spec.fracture_source(x, centroid(m, c0)) * 0.5 * (g0.v + g1.v);
        }
      }
    }
  }

  for (const OracleVertex& ov : fracture_vertices(m)) {
    const auto& f = m.features()[ov.feature];
    const double akf = f.aperture * f.permeability;
    const Point P = m.vertices()[ov.vertex];
    const Point nu = feature_tangent(m, ov.feature);
    const double pen = spec.alpha_tilde0 * k * k / ov.h;
    for (int side = 0; side < 2; ++side) {
      if (ov.interior) {
        const std::size_t t1 = cell_on_side(m, m.edges()[ov.e1], side);
        const std::size_t t2 = cell_on_side(m, m.edges()[ov.e2], side);
        const Global g1 = global(sp, t1, P), g2 = global(sp, t2, P);
        const double l1 = lam.at(t1, P), l2 = lam.at(t2, P);
        const Eigen::VectorXd jump = g1.v - g2.v;
        const Eigen::VectorXd avg = 0.5 * akf * (l1 * directional(g1, nu) + l2 * directional(g2, nu));
        d.A += -0.5 * jump * avg.transpose() + 0.5 * sigma * avg * jump.transpose() +
               pen * 0.5 * (l1 + l2) * jump * jump.transpose();
      } else {
        const std::size_t t = cell_on_side(m, m.edges()[ov.e1], side);
        const Global g = global(sp, t, P);
        const double l = lam.at_boundary(t, P, ov.sign * nu, true);
        const Eigen::VectorXd jump = ov.sign * g.v;
        const Eigen::VectorXd avg = akf * l * directional(g, nu);
        d.A += -0.5 * jump * avg.transpose() + 0.5 * sigma * avg * jump.transpose() +
               pen * l * jump * jump.transpose();
        const double gd = spec.dirichlet ? spec.dirichlet(P, centroid(m, t)) : 0.0;
        d.b += 0.5 * sigma * ov.sign * gd * avg + pen * l * gd * g.v;
      }
    }
  }
  return d;
}

/// Saturation jump penalties: β on interior, barrier and fracture edges and on inflow Dirichlet
/// edges, β̃ at interior fracture vertices and inflow Dirichlet fracture vertices.
struct Inflow {
  std::function<bool(std::size_t cell, Point x, Point n)> edge;
  std::function<bool(std::size_t cell, Point P, Point dir)> vertex;
};

inline Dense dense_penalty(const dfm::DGSpace& sp, double beta, double beta_tilde, const Inflow& in,
                           double s_d) {
  const dfm::Mesh& m = sp.mesh();
  const auto N = static_cast<Eigen::Index>(sp.n_dofs());
  Dense d{Eigen::MatrixXd::Zero(N, N), Eigen::VectorXd::Zero(N)};
  const dfm::LineRule line = dfm::gauss_legendre(sp.degree() + 3);
  for (const dfm::Edge& e : m.edges()) {
    if (e.cls == dfm::EdgeClass::Neumann) continue;
    const Segment s = segment(m, e);
    for (std::size_t q = 0; q < line.size(); ++q) {
      const Point x = s.at(line.points[q]);
      const double w = line.weights[q] * s.length();
      if (e.is_boundary()) {
        const std::size_t c = e.cells[0];
        if (!in.edge(c, x, outward(m, e, c))) continue;
        const Global g = global(sp, c, x);
        d.A += w * beta * g.v * g.v.transpose();
        d.b += w * beta * s_d * g.v;
        continue;
      }
      const Eigen::VectorXd jump = global(sp, e.cells[0], x).v - global(sp, e.cells[1], x).v;
      d.A += w * beta * jump * jump.transpose();
    }
  }
  for (const OracleVertex& ov : fracture_vertices(m)) {
    const Point P = m.vertices()[ov.vertex];
    const Point nu = feature_tangent(m, ov.feature);
    for (int side = 0; side < 2; ++side) {
      if (ov.interior) {
        const Eigen::VectorXd jump = global(sp, cell_on_side(m, m.edges()[ov.e1], side), P).v -
                                     global(sp, cell_on_side(m, m.edges()[ov.e2], side), P).v;
        d.A += beta_tilde * jump * jump.transpose();
      } else {
        const std::size_t t = cell_on_side(m, m.edges()[ov.e1], side);
        if (!in.vertex(t, P, ov.sign * nu)) continue;
        const Global g = global(sp, t, P);
        d.A += beta_tilde * g.v * g.v.transpose();
        d.b += beta_tilde * s_d * g.v;
      }
    }
  }
  return d;
}

/// φ^m (s,ξ) + ½aφ^f Σ_± ⟨s^±, ξ^±⟩ over γ₂ edges.
inline Eigen::MatrixXd dense_mass(const dfm::DGSpace& sp, double phi_m, double phi_f) {
  const dfm::Mesh& m = sp.mesh();
  const auto N = static_cast<Eigen::Index>(sp.n_dofs());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  const dfm::QuadratureRule rule = dfm::triangle_rule(2 * sp.degree() + 2);
  for (std::size_t c = 0; c < m.num_cells(); ++c) {
    const auto& cv = m.cells()[c].vertices;
    const Point a = m.vertices()[cv[0]], b = m.vertices()[cv[1]], e = m.vertices()[cv[2]];
    const double det = std::abs(dfm::cross(b - a, e - a));
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Global g = global(sp, c, a + rule.points[q].x * (b - a) + rule.points[q].y * (e - a));
      M += rule.weights[q] * det * phi_m * g.v * g.v.transpose();
    }
  }
  const dfm::LineRule line = dfm::gauss_legendre(sp.degree() + 3);
  for (const dfm::Edge& e : m.edges()) {
    if (e.cls != dfm::EdgeClass::Fracture) continue;
    const Segment s = segment(m, e);
    const double coef = 0.5 * m.features()[e.feature].aperture * phi_f;
    for (std::size_t q = 0; q < line.size(); ++q) {
      const Point x = s.at(line.points[q]);
      for (std::size_t c : e.cells) {
        const Global g = global(sp, c, x);
        M += line.weights[q] * s.length() * coef * g.v * g.v.transpose();
      }
    }
  }
  return M;
}

}  // namespace oracle
