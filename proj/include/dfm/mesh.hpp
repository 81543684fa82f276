#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dfm/geometry.hpp"

namespace dfm {

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

enum class EdgeClass : std::uint8_t { Interior, Dirichlet, Neumann, Barrier, Fracture };

enum class FeatureKind : std::uint8_t { Conductive, Blocking };

const char* to_string(EdgeClass c);
const char* to_string(FeatureKind k);

/// A straight fracture (γ₂) or barrier (γ₁) with its hydraulic properties.
struct FractureSegmentSpec {
  Point start;
  Point end;
  FeatureKind kind = FeatureKind::Conductive;
  double aperture = 1.0;
  double permeability = 1.0;

  /// Throws MeshError unless aperture and permeability are positive and the segment is non-degenerate.
  void validate() const;
};

struct Cell {
  std::array<std::size_t, 3> vertices{};  // counter-clockwise
  std::array<std::size_t, 3> edges{};     // local edge l joins local vertices l and (l+1)%3
  int region = 0;
};

struct Edge {
  std::array<std::size_t, 2> vertices{};
  std::array<std::size_t, 2> cells{kNone, kNone};
  std::array<int, 2> local{-1, -1};  // local edge index of this edge inside cells[i]
  EdgeClass cls = EdgeClass::Interior;
  int feature = -1;  // index into Mesh::features() for barrier/fracture edges
  double length = 0.0;
  Point midpoint;
  Point normal;  // unit normal pointing out of cells[0]

  // Conductive fracture edges only.
  Point tangent;                                          // ν₂, consistent along each fracture
  std::array<std::size_t, 2> side_cells{kNone, kNone};    // [0] = − side, [1] = + side

  bool is_boundary() const { return cells[1] == kNone; }
};

enum class Side : int { Minus = 0, Plus = 1 };

/// Coupling data at P★ ∈ 𝒱°: ν₂ points from e1 to e2; cells[side] = {T1^side, T2^side}.
struct InteriorCoupling {
  std::size_t e1 = kNone;
  std::size_t e2 = kNone;
  double h_star = 0.0;
  std::array<std::array<std::size_t, 2>, 2> cells{};
};

/// Coupling data at a fracture endpoint on ∂Ω.
struct BoundaryCoupling {
  std::size_t edge = kNone;
  double h_e = 0.0;
  int sign = 1;  // sign(ν₂·n)
  bool dirichlet = true;
  std::array<std::size_t, 2> cells{};  // [side]
};

/// Immersed endpoint, or a point where the fracture is cut by a barrier. Carries no coupling.
struct Tip {
  std::size_t edge = kNone;
};

enum class FractureVertexClass : std::uint8_t { Interior, Dirichlet, Neumann, Tip };

struct FractureVertex {
  std::size_t vertex = kNone;
  int feature = -1;
  std::variant<InteriorCoupling, BoundaryCoupling, Tip> coupling;

  FractureVertexClass cls() const;
};

enum class IntersectionRule : std::uint8_t {
  BarrierPriority,   // a fracture cut by a barrier splits into non-communicating pieces
  FracturePriority,  // the fracture keeps its vertex coupling across the barrier
};

struct BoundingBox {
  Point lo;
  Point hi;
  double diameter() const { return norm(hi - lo); }
};

struct EdgeTag {
  EdgeClass cls = EdgeClass::Interior;
  int feature = -1;
};

using EdgeKey = std::pair<std::size_t, std::size_t>;  // sorted vertex pair
inline EdgeKey edge_key(std::size_t a, std::size_t b) {
  return a < b ? EdgeKey{a, b} : EdgeKey{b, a};
}

struct MeshBuildOptions {
  IntersectionRule rule = IntersectionRule::BarrierPriority;
  EdgeClass default_boundary = EdgeClass::Dirichlet;
};

/// Fitted triangulation with classified edges and fracture-vertex records. Immutable once built.
class Mesh {
 public:
  using BuildOptions = MeshBuildOptions;

  /// Assembles topology and geometry. Cells are reoriented counter-clockwise. Boundary edges
  /// without a tag get `default_boundary`; interior edges without a tag are plain interior.
  static Mesh build(std::vector<Point> vertices, std::vector<std::array<std::size_t, 3>> cells,
                    const std::map<EdgeKey, EdgeTag>& tags,
                    std::vector<FractureSegmentSpec> features, std::vector<int> regions = {},
                    BuildOptions options = {});

  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<FractureSegmentSpec>& features() const { return features_; }
  const std::vector<FractureVertex>& fracture_vertices() const { return fracture_vertices_; }
  IntersectionRule intersection_rule() const { return rule_; }

  std::size_t num_cells() const { return cells_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t count(EdgeClass c) const;
  std::size_t count(FractureVertexClass c) const;

  double area(std::size_t cell) const { return areas_[cell]; }
  /// Cell diameter h_T (longest edge).
  double diameter(std::size_t cell) const { return diameters_[cell]; }
  Point centroid(std::size_t cell) const;
  /// Global mesh size h = max h_T.
  double h_max() const;
  BoundingBox bounding_box() const { return bbox_; }
  /// Largest ratio h_T / (2√3 · inradius); 1 for an equilateral triangle.
  double max_aspect_ratio() const;

  /// Returns the cell whose closure contains p (within tol · domain diameter), or nothing.
  std::optional<std::size_t> locate(Point p, double tol = 1e-10) const;
  /// Barycentric coordinates of p with respect to the cell's vertices.
  std::array<double, 3> barycentric(std::size_t cell, Point p) const;

  /// Copy with boundary edges reclassified (Dirichlet/Neumann) by `classify`; fracture
  /// vertices are rebuilt.
  Mesh with_boundary_classes(const std::function<EdgeClass(const Edge&)>& classify) const;

  /// Hash over vertex coordinates, connectivity and edge classes.
  std::uint64_t hash() const;

 private:
  void build_geometry();
  void build_locator();
  void orient_fractures();

  std::vector<Point> vertices_;
  std::vector<Cell> cells_;
  std::vector<Edge> edges_;
  std::vector<FractureSegmentSpec> features_;
  std::vector<FractureVertex> fracture_vertices_;
  std::vector<double> areas_;
  std::vector<double> diameters_;
  BoundingBox bbox_;
  IntersectionRule rule_ = IntersectionRule::BarrierPriority;

  // Uniform bucket grid for point location.
  std::size_t grid_nx_ = 1, grid_ny_ = 1;
  std::vector<std::vector<std::size_t>> grid_;
};

/// Builds the fracture-vertex records for the mesh's γ₂ edges.
std::vector<FractureVertex> classify_fracture_vertices(const Mesh& mesh, IntersectionRule rule);

/// Tags every edge lying on a feature segment (distance < tol · domain diameter). Throws
/// MeshError naming the segment if a feature is not covered by a chain of mesh edges, or if an
/// edge lies on two features.
std::map<EdgeKey, EdgeTag> tag_features(const std::vector<Point>& vertices,
                                        const std::vector<std::array<std::size_t, 3>>& cells,
                                        const std::vector<FractureSegmentSpec>& features,
                                        double tol = 1e-10);

enum class BoundarySide : std::uint8_t { Bottom, Right, Top, Left, None };
const char* to_string(BoundarySide s);
BoundarySide boundary_side(Point p, const BoundingBox& box, double tol = 1e-9);

enum class DiagonalPattern : std::uint8_t { Forward, Backward, Alternating };

struct StructuredGridSpec {
  std::size_t nx = 8;
  std::size_t ny = 8;
  Point origin{0.0, 0.0};
  double width = 1.0;
  double height = 1.0;
  DiagonalPattern pattern = DiagonalPattern::Forward;
};

/// nx·ny squares each split into two triangles, with feature edges tagged and boundary edges
/// classified per side. Throws MeshError if a feature does not lie on grid lines.
Mesh generate_structured(const StructuredGridSpec& grid,
                         const std::vector<FractureSegmentSpec>& features,
                         const std::map<BoundarySide, EdgeClass>& sides = {},
                         Mesh::BuildOptions options = {});

/// Unit square with n cells per side.
Mesh generate_structured(std::size_t n, const std::vector<FractureSegmentSpec>& features,
                         const std::map<BoundarySide, EdgeClass>& sides = {});

/// Physical tag → edge classification for the ASCII mesh reader.
struct TagMap {
  std::map<int, EdgeTag> lines;
  /// 201 Dirichlet, 202 Neumann, 101+i for the i-th blocking feature, 301+j for the j-th
  /// conductive feature (counting each kind separately in declaration order).
  static TagMap standard(const std::vector<FractureSegmentSpec>& features);
};

/// Parses an ASCII v2.2 mesh. Triangles' first tag becomes the cell region. Throws MeshError
/// on malformed input, duplicate vertices, or a declared feature not covered by its tagged edges.
Mesh import_gmsh(const std::string& text, const TagMap& tags,
                 const std::vector<FractureSegmentSpec>& features,
                 Mesh::BuildOptions options = {});

/// Writes an ASCII v2.2 mesh using the standard tag map of the mesh's features.
std::string export_gmsh(const Mesh& mesh);

/// Fracture geometry CSV: header x1,y1,x2,y2,kind,aperture,permeability; kind is
/// "conductive" or "blocking".
std::vector<FractureSegmentSpec> parse_fracture_csv(const std::string& text);
std::string write_fracture_csv(const std::vector<FractureSegmentSpec>& features);

}  // namespace dfm
