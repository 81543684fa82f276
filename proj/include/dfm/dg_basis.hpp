#pragma once

#include <Eigen/Core>
#include <Eigen/Sparse>
#include <array>
#include <cstddef>
#include <functional>
#include <vector>

#include "dfm/geometry.hpp"
#include "dfm/mesh.hpp"

namespace dfm {

/// Data on Ω. `inside` is a point in the interior of the cell the value is requested for, so
/// piecewise data can return one-sided values on interfaces.
using ScalarFn = std::function<double(Point x, Point inside)>;
using VectorFn = std::function<Point(Point x, Point inside)>;

/// Rule on the reference triangle (0,0),(1,0),(0,1); weights sum to 1/2.
struct QuadratureRule {
  std::vector<Point> points;
  std::vector<double> weights;
  std::size_t size() const { return points.size(); }
};

/// Rule on [0,1]; weights sum to 1.
struct LineRule {
  std::vector<double> points;
  std::vector<double> weights;
  std::size_t size() const { return points.size(); }
};

LineRule gauss_legendre(int n);
/// Collapsed Gauss–Legendre product rule exact for total degree `order`.
QuadratureRule triangle_rule(int order);

/// Orthonormal modal (Dubiner) basis on the reference triangle. Mode 0 is the constant √2.
class ReferenceBasis {
 public:
  static constexpr int kMaxDegree = 4;

  explicit ReferenceBasis(int degree);

  int degree() const { return degree_; }
  int size() const { return size_; }
  /// Total degree of each mode.
  int mode_degree(int i) const { return mode_degree_[i]; }

  void eval(Point xi, double* values) const;
  void eval(Point xi, double* values, Point* grads) const;

  /// Value of mode 0; the cell mean of a field is coefficient 0 times this constant.
  static double constant_mode() { return 1.4142135623730951; }

 private:
  int degree_;
  int size_;
  std::vector<int> mode_degree_;
  std::vector<std::array<int, 2>> pq_;
};

inline constexpr int kMaxLocal = 15;  // modes of the highest supported degree

/// Basis values and reference gradients tabulated at a fixed list of reference points.
struct BasisTable {
  std::vector<std::array<double, kMaxLocal>> val;
  std::vector<std::array<Point, kMaxLocal>> ref_grad;
};

/// Degree-k broken polynomial space on a mesh, with affine maps to the reference triangle.
class DGSpace {
 public:
  DGSpace(const Mesh& mesh, int degree);

  const Mesh& mesh() const { return *mesh_; }
  int degree() const { return basis_.degree(); }
  int n_local() const { return basis_.size(); }
  std::size_t n_dofs() const { return mesh_->num_cells() * static_cast<std::size_t>(n_local()); }
  std::size_t dof(std::size_t cell, int i) const {
    return cell * static_cast<std::size_t>(n_local()) + static_cast<std::size_t>(i);
  }

  const ReferenceBasis& basis() const { return basis_; }
  /// Cell rule exact to degree 2k+2.
  const QuadratureRule& cell_rule() const { return cell_rule_; }
  /// Gauss–Legendre rule with k+2 points (exact to degree 2k+3).
  const LineRule& edge_rule() const { return edge_rule_; }
  /// Cell rule exact to degree 2k+6, used for error norms.
  const QuadratureRule& error_rule() const { return error_rule_; }

  Point to_physical(std::size_t cell, Point ref) const;
  Point to_reference(std::size_t cell, Point x) const;
  /// det of the affine map, 2|T|.
  double det_j(std::size_t cell) const { return 2.0 * mesh_->area(cell); }
  Point physical_gradient(std::size_t cell, Point ref_grad) const;

  /// Values (and optionally physical gradients) of all local modes at physical point x of the
  /// cell; no containment check.
  void eval_basis(std::size_t cell, Point x, double* values, Point* grads = nullptr) const;

  /// Basis at the cell rule points.
  const BasisTable& cell_table() const { return cell_table_; }
  /// Basis at the edge rule points of local edge l of a cell, in the direction of the mesh
  /// edge's vertex order (reversed when the cell walks the edge the other way).
  const BasisTable& edge_table(int local_edge, bool reversed) const {
    return edge_tables_[local_edge * 2 + (reversed ? 1 : 0)];
  }
  /// Table for the trace of `side` (0 → cells[0], 1 → cells[1]) of a mesh edge.
  const BasisTable& trace_table(std::size_t edge, int side) const;
  /// Basis at reference corner 0, 1 or 2.
  const BasisTable& corner_table(int corner) const { return corner_tables_[corner]; }
  /// Local corner index of a mesh vertex in a cell; throws if absent.
  int corner_of(std::size_t cell, std::size_t vertex) const;

  /// Block sparsity: for each cell, the sorted cells it couples to (edge neighbours and cells
  /// sharing a fracture vertex record).
  const std::vector<std::vector<std::size_t>>& block_columns() const { return block_cols_; }
  /// All-zero matrix with the full block pattern.
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& pattern() const { return pattern_; }

 private:
  struct Map {
    Point origin;
    double jinv[2][2];  // reference = jinv · (x − origin)
  };

  const Mesh* mesh_;
  ReferenceBasis basis_;
  QuadratureRule cell_rule_;
  QuadratureRule error_rule_;
  LineRule edge_rule_;
  std::vector<Map> maps_;
  BasisTable cell_table_;
  std::array<BasisTable, 6> edge_tables_;
  std::array<BasisTable, 3> corner_tables_;
  std::vector<std::vector<std::size_t>> block_cols_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> pattern_;
};

/// Piecewise polynomial with modal coefficients stored cell by cell.
class DGField {
 public:
  explicit DGField(const DGSpace& space);
  DGField(const DGSpace& space, Eigen::VectorXd coeffs);

  const DGSpace& space() const { return *space_; }
  Eigen::VectorXd& coeffs() { return coeffs_; }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }
  double coeff(std::size_t cell, int i) const { return coeffs_[space_->dof(cell, i)]; }

  /// Throws Error if x lies outside the cell's closure (beyond 1e-8 relative).
  double value(std::size_t cell, Point x) const;
  Point gradient(std::size_t cell, Point x) const;
  double mean(std::size_t cell) const {
    return coeffs_[space_->dof(cell, 0)] * ReferenceBasis::constant_mode();
  }

  /// ∇(trace from the side cell)·ν₂ at parameter t ∈ [0,1] along a γ₂ edge.
  double tangential_derivative(std::size_t edge, Side side, double t) const;

  // Unchecked evaluation used by kernels.
  double value_unchecked(std::size_t cell, Point x) const;
  Point gradient_unchecked(std::size_t cell, Point x) const;

 private:
  void check_inside(std::size_t cell, Point x) const;

  const DGSpace* space_;
  Eigen::VectorXd coeffs_;
};

/// Cell-wise L² projection (uses the error rule).
DGField project(const DGSpace& space, const ScalarFn& f);

struct L2Errors {
  double l2 = 0.0;
  double h1 = 0.0;  // broken H¹ seminorm
};

/// ‖u − u_h‖ and ‖∇(u − u_h)‖ over the mesh; `exact` may be piecewise via `inside`.
L2Errors l2_errors(const DGField& field, const ScalarFn& exact, const VectorFn& exact_grad);

}  // namespace dfm
