#include "dfm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

const char* to_string(EdgeClass c) {
  switch (c) {
    case EdgeClass::Interior: return "interior";
    case EdgeClass::Dirichlet: return "dirichlet";
    case EdgeClass::Neumann: return "neumann";
    case EdgeClass::Barrier: return "barrier";
    case EdgeClass::Fracture: return "fracture";
  }
  return "unknown";
}

const char* to_string(FeatureKind k) {
  return k == FeatureKind::Conductive ? "conductive" : "blocking";
}

const char* to_string(BoundarySide s) {
  switch (s) {
    case BoundarySide::Bottom: return "bottom";
    case BoundarySide::Right: return "right";
    case BoundarySide::Top: return "top";
    case BoundarySide::Left: return "left";
    case BoundarySide::None: return "none";
  }
  return "none";
}

void FractureSegmentSpec::validate() const {
  if (!(aperture > 0.0)) throw MeshError("fracture aperture must be positive");
  if (!(permeability > 0.0)) throw MeshError("fracture permeability must be positive");
  if (norm(end - start) <= 0.0) throw MeshError("fracture segment is degenerate");
}

FractureVertexClass FractureVertex::cls() const {
  if (std::holds_alternative<InteriorCoupling>(coupling)) return FractureVertexClass::Interior;
  if (const auto* b = std::get_if<BoundaryCoupling>(&coupling)) {
    return b->dirichlet ? FractureVertexClass::Dirichlet : FractureVertexClass::Neumann;
  }
  return FractureVertexClass::Tip;
}

Mesh Mesh::build(std::vector<Point> vertices, std::vector<std::array<std::size_t, 3>> cells,
                 const std::map<EdgeKey, EdgeTag>& tags,
                 std::vector<FractureSegmentSpec> features, std::vector<int> regions,
                 BuildOptions options) {
  for (const auto& f : features) f.validate();
  if (!regions.empty() && regions.size() != cells.size()) {
    throw MeshError("region list does not match the cell count");
  }

  Mesh m;
  m.vertices_ = std::move(vertices);
  m.features_ = std::move(features);
  m.rule_ = options.rule;

  BoundingBox box{m.vertices_.empty() ? Point{} : m.vertices_.front(),
                  m.vertices_.empty() ? Point{} : m.vertices_.front()};
  for (const Point& p : m.vertices_) {
    box.lo = {std::min(box.lo.x, p.x), std::min(box.lo.y, p.y)};
    box.hi = {std::max(box.hi.x, p.x), std::max(box.hi.y, p.y)};
  }
  m.bbox_ = box;
  const double diam = box.diameter();

  m.cells_.reserve(cells.size());
  std::map<EdgeKey, std::size_t> edge_index;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto tri = cells[c];
    for (std::size_t v : tri) {
      if (v >= m.vertices_.size()) throw MeshError("cell references a missing vertex");
    }
    const Point& a = m.vertices_[tri[0]];
    const Point& b = m.vertices_[tri[1]];
    const Point& d = m.vertices_[tri[2]];
    const double signed_area = 0.5 * cross(b - a, d - a);
    if (std::abs(signed_area) <= 1e-14 * diam * diam) {
      throw MeshError("degenerate triangle at cell " + std::to_string(c));
    }
    if (signed_area < 0.0) std::swap(tri[1], tri[2]);

    Cell cell;
    cell.vertices = tri;
    cell.region = regions.empty() ? 0 : regions[c];
    for (int l = 0; l < 3; ++l) {
      const std::size_t va = tri[l];
      const std::size_t vb = tri[(l + 1) % 3];
      const EdgeKey key = edge_key(va, vb);
      auto it = edge_index.find(key);
      if (it == edge_index.end()) {
        Edge e;
        e.vertices = {va, vb};
        e.cells[0] = c;
        e.local[0] = l;
        edge_index.emplace(key, m.edges_.size());
        cell.edges[l] = m.edges_.size();
        m.edges_.push_back(e);
      } else {
        Edge& e = m.edges_[it->second];
        if (e.cells[1] != kNone) {
          throw MeshError("edge shared by more than two cells near cell " + std::to_string(c));
        }
        e.cells[1] = c;
        e.local[1] = l;
        cell.edges[l] = it->second;
      }
    }
    m.cells_.push_back(cell);
  }

  for (Edge& e : m.edges_) {
    e.cls = e.is_boundary() ? options.default_boundary : EdgeClass::Interior;
  }
  for (const auto& [key, tag] : tags) {
    auto it = edge_index.find(key);
    if (it == edge_index.end()) continue;
    Edge& e = m.edges_[it->second];
    const bool feature_tag = tag.cls == EdgeClass::Barrier || tag.cls == EdgeClass::Fracture;
    if (feature_tag) {
      if (e.is_boundary()) {
        throw MeshError("fracture or barrier edge lies on the domain boundary");
      }
      if (tag.feature < 0 || static_cast<std::size_t>(tag.feature) >= m.features_.size()) {
        throw MeshError("feature edge references an unknown feature");
      }
      const FeatureKind kind = m.features_[tag.feature].kind;
      if ((kind == FeatureKind::Conductive) != (tag.cls == EdgeClass::Fracture)) {
        throw MeshError("edge class does not match the feature kind");
      }
      e.cls = tag.cls;
      e.feature = tag.feature;
    } else if (tag.cls == EdgeClass::Dirichlet || tag.cls == EdgeClass::Neumann) {
      if (e.is_boundary()) e.cls = tag.cls;
    }
  }

  m.build_geometry();
  m.orient_fractures();
  m.fracture_vertices_ = classify_fracture_vertices(m, m.rule_);
  m.build_locator();
  return m;
}

void Mesh::build_geometry() {
  areas_.resize(cells_.size());
  diameters_.resize(cells_.size());
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    const auto& v = cells_[c].vertices;
    const Point a = vertices_[v[0]], b = vertices_[v[1]], d = vertices_[v[2]];
    areas_[c] = 0.5 * cross(b - a, d - a);
    diameters_[c] = std::max({norm(b - a), norm(d - b), norm(a - d)});
  }
  for (Edge& e : edges_) {
    const Point a = vertices_[e.vertices[0]];
    const Point b = vertices_[e.vertices[1]];
    e.length = norm(b - a);
    e.midpoint = 0.5 * (a + b);
    // vertices are stored in the counter-clockwise order of cells[0]
    const Point d = (b - a) * (1.0 / e.length);
    e.normal = {d.y, -d.x};
  }
}

void Mesh::orient_fractures() {
  std::map<int, std::vector<std::size_t>> by_feature;
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    if (edges_[i].cls == EdgeClass::Fracture) by_feature[edges_[i].feature].push_back(i);
  }
  for (auto& [feature, list] : by_feature) {
    const FractureSegmentSpec& spec = features_[feature];
    const Point dir = spec.end - spec.start;
    std::map<std::size_t, std::vector<std::size_t>> incident;
    for (std::size_t e : list) {
      incident[edges_[e].vertices[0]].push_back(e);
      incident[edges_[e].vertices[1]].push_back(e);
    }
    std::set<std::size_t> visited;
    // Start walks at chain ends in the declared direction, then close any loops.
    std::vector<std::size_t> starts;
    for (const auto& [v, es] : incident) {
      if (es.size() == 1) starts.push_back(v);
    }
    std::sort(starts.begin(), starts.end(), [&](std::size_t a, std::size_t b) {
      return dot(vertices_[a], dir) < dot(vertices_[b], dir);
    });
    for (const auto& [v, es] : incident) starts.push_back(v);

    for (std::size_t start : starts) {
      std::size_t cur = start;
      for (;;) {
        std::size_t next_edge = kNone;
        for (std::size_t e : incident[cur]) {
          if (!visited.count(e)) {
            next_edge = e;
            break;
          }
        }
        if (next_edge == kNone) break;
        visited.insert(next_edge);
        Edge& e = edges_[next_edge];
        const std::size_t other = e.vertices[0] == cur ? e.vertices[1] : e.vertices[0];
        e.tangent = normalized(vertices_[other] - vertices_[cur]);
        const Point n = rot90(e.tangent);
        // The − side is the cell out of which rot90(ν₂) points.
        if (dot(e.normal, n) > 0.0) {
          e.side_cells = {e.cells[0], e.cells[1]};
        } else {
          e.side_cells = {e.cells[1], e.cells[0]};
        }
        cur = other;
      }
    }
  }
}

namespace {

/// True when `v` is the head of fracture edge `e` with respect to its tangent.
bool is_head(const Mesh& mesh, const Edge& e, std::size_t v) {
  const std::size_t other = e.vertices[0] == v ? e.vertices[1] : e.vertices[0];
  return dot(mesh.vertices()[v] - mesh.vertices()[other], e.tangent) > 0.0;
}

}  // namespace

std::vector<FractureVertex> classify_fracture_vertices(const Mesh& mesh, IntersectionRule rule) {
  const auto& edges = mesh.edges();
  std::vector<char> on_boundary(mesh.vertices().size(), 0);
  std::vector<char> on_dirichlet(mesh.vertices().size(), 0);
  std::vector<char> on_barrier(mesh.vertices().size(), 0);
  std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> incident;

  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    for (std::size_t v : e.vertices) {
      if (e.is_boundary()) {
        on_boundary[v] = 1;
        if (e.cls == EdgeClass::Dirichlet) on_dirichlet[v] = 1;
      }
      if (e.cls == EdgeClass::Barrier) on_barrier[v] = 1;
      if (e.cls == EdgeClass::Fracture) incident[{e.feature, v}].push_back(i);
    }
  }

  std::vector<FractureVertex> out;
  for (const auto& [key, list] : incident) {
    const auto [feature, v] = key;
    const bool cut = rule == IntersectionRule::BarrierPriority && on_barrier[v];
    FractureVertex rec;
    rec.vertex = v;
    rec.feature = feature;
    if (list.size() >= 3) {
      throw MeshError("fracture " + std::to_string(feature) + " branches at vertex " +
                      std::to_string(v));
    }
    if (list.size() == 2) {
      if (cut) {
        for (std::size_t e : list) {
          rec.coupling = Tip{e};
          out.push_back(rec);
        }
        continue;
      }
      const Edge& a = edges[list[0]];
      const Edge& b = edges[list[1]];
      const bool a_head = is_head(mesh, a, v);
      const bool b_head = is_head(mesh, b, v);
      if (a_head == b_head) {
        throw MeshError("inconsistent fracture orientation at vertex " + std::to_string(v));
      }
      InteriorCoupling ic;
      ic.e1 = a_head ? list[0] : list[1];
      ic.e2 = a_head ? list[1] : list[0];
      const Edge& e1 = edges[ic.e1];
      const Edge& e2 = edges[ic.e2];
      ic.h_star = std::min(e1.length, e2.length);
      for (int s = 0; s < 2; ++s) ic.cells[s] = {e1.side_cells[s], e2.side_cells[s]};
      rec.coupling = ic;
    } else {
      const Edge& e = edges[list[0]];
      if (cut || !on_boundary[v]) {
        rec.coupling = Tip{list[0]};
      } else {
        BoundaryCoupling bc;
        bc.edge = list[0];
        bc.h_e = e.length;
        bc.sign = is_head(mesh, e, v) ? 1 : -1;
        bc.dirichlet = on_dirichlet[v] != 0;
        bc.cells = e.side_cells;
        rec.coupling = bc;
      }
    }
    out.push_back(rec);
  }
  return out;
}

std::size_t Mesh::count(EdgeClass c) const {
  return static_cast<std::size_t>(
      std::count_if(edges_.begin(), edges_.end(), [c](const Edge& e) { return e.cls == c; }));
}

std::size_t Mesh::count(FractureVertexClass c) const {
  return static_cast<std::size_t>(std::count_if(
      fracture_vertices_.begin(), fracture_vertices_.end(),
      [c](const FractureVertex& v) { return v.cls() == c; }));
}

Point Mesh::centroid(std::size_t cell) const {
  const auto& v = cells_[cell].vertices;
  return (1.0 / 3.0) * (vertices_[v[0]] + vertices_[v[1]] + vertices_[v[2]]);
}

double Mesh::h_max() const {
  return diameters_.empty() ? 0.0 : *std::max_element(diameters_.begin(), diameters_.end());
}

double Mesh::max_aspect_ratio() const {
  double worst = 0.0;
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    const auto& v = cells_[c].vertices;
    const double perimeter = norm(vertices_[v[1]] - vertices_[v[0]]) +
                             norm(vertices_[v[2]] - vertices_[v[1]]) +
                             norm(vertices_[v[0]] - vertices_[v[2]]);
    const double inradius = 2.0 * areas_[c] / perimeter;
    worst = std::max(worst, diameters_[c] / (2.0 * std::sqrt(3.0) * inradius));
  }
  return worst;
}

std::array<double, 3> Mesh::barycentric(std::size_t cell, Point p) const {
  const auto& v = cells_[cell].vertices;
  const Point a = vertices_[v[0]], b = vertices_[v[1]], d = vertices_[v[2]];
  const double twice = 2.0 * areas_[cell];
  const double l1 = cross(p - a, d - a) / twice;  // weight of b
  const double l2 = cross(b - a, p - a) / twice;  // weight of d
  return {1.0 - l1 - l2, l1, l2};
}

void Mesh::build_locator() {
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(
                                                     static_cast<double>(cells_.size()) / 2.0)));
  grid_nx_ = grid_ny_ = n;
  grid_.assign(n * n, {});
  const double w = std::max(bbox_.hi.x - bbox_.lo.x, 1e-300);
  const double h = std::max(bbox_.hi.y - bbox_.lo.y, 1e-300);
  auto clampi = [n](double t) {
    const auto i = static_cast<long long>(std::floor(t * static_cast<double>(n)));
    return static_cast<std::size_t>(std::clamp<long long>(i, 0, static_cast<long long>(n) - 1));
  };
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    Point lo = vertices_[cells_[c].vertices[0]], hi = lo;
    for (std::size_t v : cells_[c].vertices) {
      lo = {std::min(lo.x, vertices_[v].x), std::min(lo.y, vertices_[v].y)};
      hi = {std::max(hi.x, vertices_[v].x), std::max(hi.y, vertices_[v].y)};
    }
    const std::size_t i0 = clampi((lo.x - bbox_.lo.x) / w), i1 = clampi((hi.x - bbox_.lo.x) / w);
    const std::size_t j0 = clampi((lo.y - bbox_.lo.y) / h), j1 = clampi((hi.y - bbox_.lo.y) / h);
    for (std::size_t j = j0; j <= j1; ++j) {
      for (std::size_t i = i0; i <= i1; ++i) grid_[j * n + i].push_back(c);
    }
  }
}

std::optional<std::size_t> Mesh::locate(Point p, double tol) const {
  const double diam = bbox_.diameter();
  const double slack = tol * diam;
  if (p.x < bbox_.lo.x - slack || p.x > bbox_.hi.x + slack || p.y < bbox_.lo.y - slack ||
      p.y > bbox_.hi.y + slack) {
    return std::nullopt;
  }
  const double w = std::max(bbox_.hi.x - bbox_.lo.x, 1e-300);
  const double h = std::max(bbox_.hi.y - bbox_.lo.y, 1e-300);
  auto clampi = [](double t, std::size_t n) {
    const auto i = static_cast<long long>(std::floor(t * static_cast<double>(n)));
    return static_cast<std::size_t>(std::clamp<long long>(i, 0, static_cast<long long>(n) - 1));
  };
  const std::size_t i = clampi((p.x - bbox_.lo.x) / w, grid_nx_);
  const std::size_t j = clampi((p.y - bbox_.lo.y) / h, grid_ny_);
  for (std::size_t c : grid_[j * grid_nx_ + i]) {
    const auto bc = barycentric(c, p);
    const double rel = slack / diameters_[c];
    if (bc[0] >= -rel && bc[1] >= -rel && bc[2] >= -rel) return c;
  }
  return std::nullopt;
}

Mesh Mesh::with_boundary_classes(const std::function<EdgeClass(const Edge&)>& classify) const {
  std::vector<std::array<std::size_t, 3>> tris;
  std::vector<int> regions;
  for (const Cell& c : cells_) {
    tris.push_back(c.vertices);
    regions.push_back(c.region);
  }
  std::map<EdgeKey, EdgeTag> tags;
  for (const Edge& e : edges_) {
    EdgeTag t{e.cls, e.feature};
    if (e.is_boundary()) t.cls = classify(e);
    tags[edge_key(e.vertices[0], e.vertices[1])] = t;
  }
  BuildOptions opt;
  opt.rule = rule_;
  return build(vertices_, std::move(tris), tags, features_, std::move(regions), opt);
}

std::uint64_t Mesh::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const Point& p : vertices_) {
    mix(&p.x, sizeof(double));
    mix(&p.y, sizeof(double));
  }
  for (const Cell& c : cells_) {
    for (std::size_t v : c.vertices) {
      const auto u = static_cast<std::uint64_t>(v);
      mix(&u, sizeof(u));
    }
  }
  for (const Edge& e : edges_) {
    const auto cls = static_cast<std::uint8_t>(e.cls);
    mix(&cls, 1);
  }
  return h;
}

BoundarySide boundary_side(Point p, const BoundingBox& box, double tol) {
  const double t = tol * std::max(box.diameter(), 1e-300);
  if (std::abs(p.x - box.lo.x) <= t) return BoundarySide::Left;
  if (std::abs(p.x - box.hi.x) <= t) return BoundarySide::Right;
  if (std::abs(p.y - box.lo.y) <= t) return BoundarySide::Bottom;
  if (std::abs(p.y - box.hi.y) <= t) return BoundarySide::Top;
  return BoundarySide::None;
}

std::map<EdgeKey, EdgeTag> tag_features(const std::vector<Point>& vertices,
                                        const std::vector<std::array<std::size_t, 3>>& cells,
                                        const std::vector<FractureSegmentSpec>& features,
                                        double tol) {
  std::set<EdgeKey> keys;
  for (const auto& c : cells) {
    for (int l = 0; l < 3; ++l) keys.insert(edge_key(c[l], c[(l + 1) % 3]));
  }
  Point lo = vertices.empty() ? Point{} : vertices.front(), hi = lo;
  for (const Point& p : vertices) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }
  const double eps = tol * norm(hi - lo);

  std::map<EdgeKey, EdgeTag> tags;
  for (std::size_t f = 0; f < features.size(); ++f) {
    const auto& s = features[f];
    double covered = 0.0;
    for (const EdgeKey& k : keys) {
      const Point a = vertices[k.first], b = vertices[k.second];
      if (distance_to_segment(a, s.start, s.end) < eps &&
          distance_to_segment(b, s.start, s.end) < eps) {
        auto [it, inserted] = tags.emplace(
            k, EdgeTag{s.kind == FeatureKind::Conductive ? EdgeClass::Fracture
                                                         : EdgeClass::Barrier,
                       static_cast<int>(f)});
        if (!inserted) {
          throw MeshError("edge lies on both feature " + std::to_string(it->second.feature) +
                          " and feature " + std::to_string(f));
        }
        covered += norm(b - a);
      }
    }
    const double len = norm(s.end - s.start);
    if (std::abs(covered - len) > 1e-8 * len) {
      std::ostringstream msg;
      msg << "feature " << f << " (" << s.start.x << ", " << s.start.y << ")-(" << s.end.x
          << ", " << s.end.y << ") is not resolved by mesh edges (covered length " << covered
          << " of " << len << ")";
      throw MeshError(msg.str());
    }
  }
  return tags;
}

Mesh generate_structured(const StructuredGridSpec& grid,
                         const std::vector<FractureSegmentSpec>& features,
                         const std::map<BoundarySide, EdgeClass>& sides,
                         Mesh::BuildOptions options) {
  if (grid.nx == 0 || grid.ny == 0) throw MeshError("structured grid needs at least one cell");
  const std::size_t nx = grid.nx, ny = grid.ny;
  std::vector<Point> vertices;
  vertices.reserve((nx + 1) * (ny + 1));
  for (std::size_t j = 0; j <= ny; ++j) {
    for (std::size_t i = 0; i <= nx; ++i) {
      vertices.push_back({grid.origin.x + grid.width * static_cast<double>(i) / nx,
                          grid.origin.y + grid.height * static_cast<double>(j) / ny});
    }
  }
  auto id = [nx](std::size_t i, std::size_t j) { return j * (nx + 1) + i; };
  std::vector<std::array<std::size_t, 3>> cells;
  cells.reserve(2 * nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const std::size_t v00 = id(i, j), v10 = id(i + 1, j), v01 = id(i, j + 1),
                        v11 = id(i + 1, j + 1);
      const bool forward = grid.pattern == DiagonalPattern::Forward ||
                           (grid.pattern == DiagonalPattern::Alternating && (i + j) % 2 == 0);
      if (forward) {
        cells.push_back({v00, v10, v11});
        cells.push_back({v00, v11, v01});
      } else {
        cells.push_back({v00, v10, v01});
        cells.push_back({v10, v11, v01});
      }
    }
  }

  auto tags = tag_features(vertices, cells, features);
  const BoundingBox box{grid.origin, grid.origin + Point{grid.width, grid.height}};
  std::map<EdgeKey, int> seen;
  for (const auto& c : cells) {
    for (int l = 0; l < 3; ++l) ++seen[edge_key(c[l], c[(l + 1) % 3])];
  }
  for (const auto& [k, n] : seen) {
    if (n != 1) continue;
    const Point mid = 0.5 * (vertices[k.first] + vertices[k.second]);
    const auto it = sides.find(boundary_side(mid, box));
    tags[k] = EdgeTag{it == sides.end() ? options.default_boundary : it->second, -1};
  }
  return Mesh::build(std::move(vertices), std::move(cells), tags, features, {}, options);
}

Mesh generate_structured(std::size_t n, const std::vector<FractureSegmentSpec>& features,
                         const std::map<BoundarySide, EdgeClass>& sides) {
  StructuredGridSpec g;
  g.nx = g.ny = n;
  return generate_structured(g, features, sides);
}

TagMap TagMap::standard(const std::vector<FractureSegmentSpec>& features) {
  TagMap t;
  t.lines[201] = {EdgeClass::Dirichlet, -1};
  t.lines[202] = {EdgeClass::Neumann, -1};
  int blocking = 0, conductive = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const int f = static_cast<int>(i);
    if (features[i].kind == FeatureKind::Blocking) {
      t.lines[101 + blocking++] = {EdgeClass::Barrier, f};
    } else {
      t.lines[301 + conductive++] = {EdgeClass::Fracture, f};
    }
  }
  return t;
}

namespace {

std::string next_section(std::istream& in) {
  std::string word;
  while (in >> word) {
    if (!word.empty() && word[0] == '$' && word.rfind("$End", 0) != 0) return word;
  }
  return {};
}

void expect_end(std::istream& in, const std::string& name) {
  std::string word;
  if (!(in >> word) || word != "$End" + name) {
    throw MeshError("mesh file: missing $End" + name);
  }
}

}  // namespace

Mesh import_gmsh(const std::string& text, const TagMap& tags,
                 const std::vector<FractureSegmentSpec>& features, Mesh::BuildOptions options) {
  std::istringstream in(text);
  std::vector<Point> vertices;
  std::map<long long, std::size_t> node_index;
  std::vector<std::array<std::size_t, 3>> cells;
  std::vector<int> regions;
  std::map<EdgeKey, EdgeTag> edge_tags;
  bool have_format = false, have_nodes = false, have_elements = false;

  for (std::string section = next_section(in); !section.empty(); section = next_section(in)) {
    if (section == "$MeshFormat") {
      double version = 0.0;
      int file_type = 0, data_size = 0;
      if (!(in >> version >> file_type >> data_size)) throw MeshError("mesh file: bad format line");
      if (version < 2.0 || version >= 3.0 || file_type != 0) {
        throw MeshError("mesh file: only ASCII version 2 is supported");
      }
      expect_end(in, "MeshFormat");
      have_format = true;
    } else if (section == "$Nodes") {
      std::size_t n = 0;
      if (!(in >> n)) throw MeshError("mesh file: bad node count");
      vertices.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        long long id = 0;
        double x = 0, y = 0, z = 0;
        if (!(in >> id >> x >> y >> z)) throw MeshError("mesh file: truncated node list");
        if (!node_index.emplace(id, vertices.size()).second) {
          throw MeshError("mesh file: node id " + std::to_string(id) + " repeated");
        }
        vertices.push_back({x, y});
      }
      expect_end(in, "Nodes");
      have_nodes = true;
    } else if (section == "$Elements") {
      if (!have_nodes) throw MeshError("mesh file: elements before nodes");
      std::size_t n = 0;
      if (!(in >> n)) throw MeshError("mesh file: bad element count");
      auto node = [&](long long id) {
        auto it = node_index.find(id);
        if (it == node_index.end()) {
          throw MeshError("mesh file: element references unknown node " + std::to_string(id));
        }
        return it->second;
      };
      for (std::size_t i = 0; i < n; ++i) {
        long long id = 0;
        int type = 0, ntags = 0;
        if (!(in >> id >> type >> ntags) || ntags < 0) {
          throw MeshError("mesh file: truncated element list");
        }
        std::vector<int> etags(static_cast<std::size_t>(ntags));
        for (int& t : etags) in >> t;
        const int physical = etags.empty() ? 0 : etags[0];
        if (type == 15) {
          long long v;
          in >> v;
        } else if (type == 1) {
          long long a, b;
          in >> a >> b;
          auto it = tags.lines.find(physical);
          if (it != tags.lines.end()) edge_tags[edge_key(node(a), node(b))] = it->second;
        } else if (type == 2) {
          long long a, b, c;
          in >> a >> b >> c;
          cells.push_back({node(a), node(b), node(c)});
          regions.push_back(physical);
        } else {
          throw MeshError("mesh file: unsupported element type " + std::to_string(type));
        }
        if (!in) throw MeshError("mesh file: truncated element list");
      }
      expect_end(in, "Elements");
      have_elements = true;
    } else {
      // skip unknown sections
      const std::string end = "$End" + section.substr(1);
      std::string word;
      while (in >> word && word != end) {
      }
    }
  }
  if (!have_format || !have_nodes || !have_elements) {
    throw MeshError("mesh file: missing $MeshFormat, $Nodes or $Elements");
  }
  if (cells.empty()) throw MeshError("mesh file: no triangles");

  // Vertex coincidence check.
  {
    std::vector<std::size_t> order(vertices.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return vertices[a].x < vertices[b].x ||
             (vertices[a].x == vertices[b].x && vertices[a].y < vertices[b].y);
    });
    Point lo = vertices.front(), hi = lo;
    for (const Point& p : vertices) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    const double tol = 1e-12 * norm(hi - lo);
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (std::size_t j = i + 1; j < order.size(); ++j) {
        const Point a = vertices[order[i]], b = vertices[order[j]];
        if (b.x - a.x > tol) break;
        if (norm(b - a) <= tol) {
          throw MeshError("mesh file: duplicate vertices " + std::to_string(order[i]) + " and " +
                          std::to_string(order[j]));
        }
      }
    }
  }

  // Every declared feature must be covered by its tagged edges.
  std::vector<double> covered(features.size(), 0.0);
  for (const auto& [key, tag] : edge_tags) {
    if (tag.feature >= 0 && static_cast<std::size_t>(tag.feature) < features.size()) {
      covered[tag.feature] += norm(vertices[key.second] - vertices[key.first]);
    }
  }
  for (std::size_t f = 0; f < features.size(); ++f) {
    const double len = norm(features[f].end - features[f].start);
    if (std::abs(covered[f] - len) > 1e-8 * len) {
      std::ostringstream msg;
      msg << "feature " << f << " (" << features[f].start.x << ", " << features[f].start.y
          << ")-(" << features[f].end.x << ", " << features[f].end.y
          << ") is not covered by tagged mesh edges";
      throw MeshError(msg.str());
    }
  }

  return Mesh::build(std::move(vertices), std::move(cells), edge_tags, features,
                     std::move(regions), options);
}

std::string export_gmsh(const Mesh& mesh) {
  const TagMap tags = TagMap::standard(mesh.features());
  auto physical = [&](const Edge& e) {
    for (const auto& [tag, t] : tags.lines) {
      if (t.cls == e.cls && t.feature == e.feature) return tag;
    }
    return 0;
  };
  std::ostringstream out;
  out.precision(17);
  out << "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n" << mesh.vertices().size() << "\n";
  for (std::size_t i = 0; i < mesh.vertices().size(); ++i) {
    out << i + 1 << " " << mesh.vertices()[i].x << " " << mesh.vertices()[i].y << " 0\n";
  }
  out << "$EndNodes\n$Elements\n";
  std::vector<std::size_t> lines;
  for (std::size_t i = 0; i < mesh.num_edges(); ++i) {
    if (mesh.edges()[i].cls != EdgeClass::Interior) lines.push_back(i);
  }
  out << lines.size() + mesh.num_cells() << "\n";
  std::size_t id = 1;
  for (std::size_t i : lines) {
    const Edge& e = mesh.edges()[i];
    const int tag = physical(e);
    out << id++ << " 1 2 " << tag << " " << tag << " " << e.vertices[0] + 1 << " "
        << e.vertices[1] + 1 << "\n";
  }
  for (const Cell& c : mesh.cells()) {
    out << id++ << " 2 2 " << c.region << " " << c.region << " " << c.vertices[0] + 1 << " "
        << c.vertices[1] + 1 << " " << c.vertices[2] + 1 << "\n";
  }
  out << "$EndElements\n";
  return out.str();
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : field.substr(b, e - b + 1));
  }
  return out;
}

double parse_number(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw MeshError("fracture csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace

std::vector<FractureSegmentSpec> parse_fracture_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<FractureSegmentSpec> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto f = split_csv(line);
    if (!header) {
      const std::vector<std::string> expected{"x1", "y1", "x2", "y2",
                                              "kind", "aperture", "permeability"};
      if (f != expected) throw MeshError("fracture csv: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    if (f.size() != 7) {
      throw MeshError("fracture csv line " + std::to_string(lineno) + ": expected 7 fields");
    }
    FractureSegmentSpec s;
    s.start = {parse_number(f[0], lineno), parse_number(f[1], lineno)};
    s.end = {parse_number(f[2], lineno), parse_number(f[3], lineno)};
    if (f[4] == "conductive") {
      s.kind = FeatureKind::Conductive;
    } else if (f[4] == "blocking") {
      s.kind = FeatureKind::Blocking;
    } else {
      throw MeshError("fracture csv line " + std::to_string(lineno) + ": unknown kind '" + f[4] +
                      "'");
    }
    s.aperture = parse_number(f[5], lineno);
    s.permeability = parse_number(f[6], lineno);
    s.validate();
    out.push_back(s);
  }
  if (!header) throw MeshError("fracture csv: missing header");
  return out;
}

std::string write_fracture_csv(const std::vector<FractureSegmentSpec>& features) {
  std::ostringstream out;
  out.precision(17);
  out << "x1,y1,x2,y2,kind,aperture,permeability\n";
  for (const auto& f : features) {
    out << f.start.x << "," << f.start.y << "," << f.end.x << "," << f.end.y << ","
        << to_string(f.kind) << "," << f.aperture << "," << f.permeability << "\n";
  }
  return out.str();
}

}  // namespace dfm
