#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfm/dg_basis.hpp"
#include "dfm/manufactured.hpp"
#include "dfm/solver.hpp"

namespace dfm {

struct ErrorRow {
  double h = 0.0;
  double l2 = 0.0;
  double h1 = 0.0;  // broken H¹ seminorm
  double dg = 0.0;
  std::optional<double> l2_order, h1_order, dg_order;
};

struct ErrorReport {
  std::vector<ErrorRow> rows;

  /// Header h,l2,l2_order,h1,h1_order,dg,dg_order; missing orders are empty fields.
  std::string csv() const;
};

/// Fills the order columns: log₂(e_prev/e) where h_prev = 2h (relative 1e-9), empty otherwise.
void compute_orders(ErrorReport& report);
/// Parses the CSV written by ErrorReport::csv.
ErrorReport parse_error_csv(const std::string& text);

struct ConvergenceOptions {
  Scheme scheme = Scheme::Sipg;
  double alpha0 = 10.0;
  double alpha_tilde0 = 10.0;
  /// Backward splits reproduce the reference error tables to three digits.
  DiagonalPattern pattern = DiagonalPattern::Backward;
  SolverConfig solver{};
  unsigned threads = 1;
};

/// Solves the manufactured problem on n×n structured grids for every n in `levels` and
/// records the L², broken H¹ and DG errors.
ErrorReport convergence_table(ManufacturedCase which, int degree,
                              const std::vector<std::size_t>& levels,
                              const ConvergenceOptions& options = {});

enum class SliceSide { Minus, Plus, Single };
/// "−", "+" or "·".
const char* to_string(SliceSide s);

struct SliceRow {
  double s = 0.0;  // arc-length parameter in [0,1]
  Point x;
  SliceSide side = SliceSide::Single;
  double value = 0.0;
};

struct SliceRequest {
  Point start;
  Point end;
  std::size_t samples = 100;  // N; N+1 points are taken
};

/// Samples the field at N+1 uniform points of the segment. A point on a cell interface
/// yields two rows: − from the cell the segment comes from, + from the cell it enters (for a
/// segment running along an edge, − is the cell on its right). Throws Error naming the first
/// sample outside the mesh.
std::vector<SliceRow> extract_slice(const DGField& field, const SliceRequest& request);
/// Header s,x,y,side,value.
std::string slice_csv(const std::vector<SliceRow>& rows);
std::vector<SliceRow> parse_slice_csv(const std::string& text);

/// Discrepancy between a computed slice and a reference curve, both over s. Where either
/// curve has two rows at one s the jump is kept: the reference is read as piecewise linear
/// with one-sided limits.
struct SliceDiscrepancy {
  std::size_t samples = 0;
  double max_abs = 0.0;
  double rms = 0.0;
  double max_rel = 0.0;  // max_abs over the reference's value range
  double worst_s = 0.0;
};
SliceDiscrepancy compare_slices(const std::vector<SliceRow>& computed,
                                const std::vector<SliceRow>& reference);

struct NamedField {
  std::string name;
  const DGField* field = nullptr;
};

/// Legacy ASCII VTK 3.0 unstructured grid with three private points per cell. Every field is
/// written as point data (corner values) and as cell data (cell means, name suffixed "_mean");
/// the cell region is added as cell data "region".
void write_vtk(std::ostream& out, const Mesh& mesh, const std::vector<NamedField>& fields,
               const std::string& title = "dfm");

}  // namespace dfm
