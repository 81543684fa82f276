#pragma once

#include <Eigen/Sparse>
#include <cstddef>
#include <functional>

#include "dfm/dg_basis.hpp"
#include "dfm/problem.hpp"

namespace dfm {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct SparseSystem {
  SparseMatrix matrix;
  Eigen::VectorXd rhs;
  bool symmetric = false;  // true iff σ = −1
};

/// Matrix with the space's block pattern; dense cell blocks are accumulated in place.
class BlockMatrix {
 public:
  explicit BlockMatrix(const DGSpace& space);
  /// block is n×n row-major with row stride kMaxLocal.
  void add(std::size_t row_cell, std::size_t col_cell, const double* block);
  /// Same, contiguous n×n row-major.
  void add_dense(std::size_t row_cell, std::size_t col_cell, const double* block);
  SparseMatrix& matrix() { return m_; }
  const SparseMatrix& matrix() const { return m_; }

 private:
  double* row(std::size_t row_cell, std::size_t col_cell, int i);

  const DGSpace* space_;
  SparseMatrix m_;
};

/// Weights multiplying K_m, k_b/a and a·k_f (phase mobilities in two-phase runs). Every empty
/// member means weight 1, or the cell weight of the adjacent trace where one is defined.
struct Coefficients {
  /// Weight of the cell's own trace at x.
  std::function<double(std::size_t cell, Point x)> cell;
  /// Weight used for every term on a Dirichlet edge.
  std::function<double(std::size_t edge, Point x)> dirichlet_edge;
  /// Weight used for every term at a Dirichlet fracture vertex, by record index and side.
  std::function<double(std::size_t record, int side)> dirichlet_vertex;
  /// Replaces ProblemSpec::neumann on Neumann edges.
  std::function<double(std::size_t edge, Point x)> neumann_flux;
};

struct AssemblyParts {
  bool bulk = true;      // (K∇p,∇ξ) and (q,ξ)
  bool faces = true;     // flux, σ and α terms on ℰ⁰ ∪ ℰᴰ ∪ ℰ^γ², Dirichlet and Neumann loads
  bool barrier = true;   // (k_b/a) jump coupling on ℰ^γ¹
  bool fracture = true;  // tangential terms, vertex terms, q_f and vertex Dirichlet loads
  /// When false, only penalty and volume terms remain (flux and σ terms are dropped).
  bool consistency = true;
};

struct AssemblyOptions {
  AssemblyParts parts;
  unsigned threads = 1;
};

/// Matrix and load of a_h + b_h = F_h + G_h. Output is identical for any thread count.
SparseSystem assemble(const DGSpace& space, const ProblemSpec& spec,
                      const Coefficients& coeffs = {}, const AssemblyOptions& options = {});

SparseSystem assemble_bulk(const DGSpace& space, const ProblemSpec& spec);
SparseSystem assemble_interior_faces(const DGSpace& space, const ProblemSpec& spec);
SparseSystem assemble_barrier(const DGSpace& space, const ProblemSpec& spec);
SparseSystem assemble_fracture(const DGSpace& space, const ProblemSpec& spec);

/// The seven squared contributions of the DG norm.
struct DGNormParts {
  double gradient = 0.0;
  double jump = 0.0;
  double barrier = 0.0;
  double tangential_minus = 0.0;
  double tangential_plus = 0.0;
  double vertex_minus = 0.0;
  double vertex_plus = 0.0;
  double total() const;
};

using CellValueFn = std::function<double(std::size_t cell, Point x)>;
using CellGradFn = std::function<Point(std::size_t cell, Point x)>;

/// DG norm of the broken function given cell by cell.
DGNormParts dg_norm_parts(const DGSpace& space, const ProblemSpec& spec, const CellValueFn& value,
                          const CellGradFn& grad);
double dg_norm(const DGField& field, const ProblemSpec& spec);
/// ‖p − p_h‖_DG for a closed-form p (piecewise via `inside`).
double dg_error(const DGField& field, const ProblemSpec& spec, const ScalarFn& exact,
                const VectorFn& exact_grad);

/// max_i |(A Πp − b)_i| for the assembled system and the L² projection of p.
double residual_check(const DGSpace& space, const ProblemSpec& spec, const ScalarFn& exact);

}  // namespace dfm
