#include "dfm/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "dfm/assembly.hpp"
#include "dfm/error.hpp"

namespace dfm {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error("line " + std::to_string(line) + ": '" + s + "' is not a number");
}

std::vector<std::vector<std::string>> read_csv(const std::string& text, const std::string& header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw Error("expected CSV header '" + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  const std::size_t columns = split(header).size();
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto fields = split(line);
    if (fields.size() != columns) {
      throw Error("line " + std::to_string(n) + ": expected " + std::to_string(columns) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

const char* kErrorHeader = "h,l2,l2_order,h1,h1_order,dg,dg_order";
const char* kSliceHeader = "s,x,y,side,value";

}  // namespace

std::string ErrorReport::csv() const {
  auto order = [](const std::optional<double>& o) { return o ? num(*o) : std::string(); };
  std::string out = std::string(kErrorHeader) + "\n";
  for (const ErrorRow& r : rows) {
    out += num(r.h) + "," + num(r.l2) + "," + order(r.l2_order) + "," + num(r.h1) + "," +
           order(r.h1_order) + "," + num(r.dg) + "," + order(r.dg_order) + "\n";
  }
  return out;
}

void compute_orders(ErrorReport& report) {
  auto& rows = report.rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ErrorRow& r = rows[i];
    r.l2_order.reset();
    r.h1_order.reset();
    r.dg_order.reset();
    if (i == 0) continue;
    const ErrorRow& p = rows[i - 1];
    if (std::abs(p.h - 2.0 * r.h) > 1e-9 * p.h) continue;
    r.l2_order = std::log2(p.l2 / r.l2);
    r.h1_order = std::log2(p.h1 / r.h1);
    r.dg_order = std::log2(p.dg / r.dg);
  }
}

ErrorReport parse_error_csv(const std::string& text) {
  ErrorReport report;
  std::size_t line = 1;
  for (const auto& f : read_csv(text, kErrorHeader)) {
    ++line;
    auto order = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return parse_double(s, line);
    };
    ErrorRow r;
    r.h = parse_double(f[0], line);
    r.l2 = parse_double(f[1], line);
    r.l2_order = order(f[2]);
    r.h1 = parse_double(f[3], line);
    r.h1_order = order(f[4]);
    r.dg = parse_double(f[5], line);
    r.dg_order = order(f[6]);
    report.rows.push_back(r);
  }
  return report;
}

ErrorReport convergence_table(ManufacturedCase which, int degree,
                              const std::vector<std::size_t>& levels,
                              const ConvergenceOptions& options) {
  const ManufacturedSolution m = manufactured(which);
  const ProblemSpec spec =
      manufactured_problem(m, options.scheme, options.alpha0, options.alpha_tilde0);
  ErrorReport report;
  for (std::size_t n : levels) {
    StructuredGridSpec grid;
    grid.nx = grid.ny = n;
    grid.pattern = options.pattern;
    const Mesh mesh = generate_structured(grid, m.features);
    const DGSpace space(mesh, degree);
    AssemblyOptions ao;
    ao.threads = options.threads;
    const SparseSystem sys = assemble(space, spec, {}, ao);
    const DGField ph(space, solve(sys, options.solver).x);
    const L2Errors e = l2_errors(ph, m.exact, m.gradient);
    ErrorRow row;
    row.h = 1.0 / static_cast<double>(n);
    row.l2 = e.l2;
    row.h1 = e.h1;
    row.dg = dg_error(ph, spec, m.exact, m.gradient);
    report.rows.push_back(row);
  }
  compute_orders(report);
  return report;
}

const char* to_string(SliceSide s) {
  switch (s) {
    case SliceSide::Minus: return "−";
    case SliceSide::Plus: return "+";
    case SliceSide::Single: return "·";
  }
  return "?";
}

std::vector<SliceRow> extract_slice(const DGField& field, const SliceRequest& req) {
  const Mesh& mesh = field.space().mesh();
  if (req.samples == 0) throw Error("slice needs at least one interval");
  const Point d = req.end - req.start;
  if (norm(d) == 0.0) throw Error("slice segment is degenerate");
  const Point dir = normalized(d);
  const Point left = rot90(dir);
  const double eps = 1e-7 * mesh.bounding_box().diameter();

  std::vector<SliceRow> rows;
  for (std::size_t i = 0; i <= req.samples; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(req.samples);
    const Point x = req.start + s * d;
    if (!mesh.locate(x)) {
      std::ostringstream msg;
      msg << "slice sample " << i << " at (" << num(x.x) << ", " << num(x.y)
          << ") lies outside the mesh";
      throw Error(msg.str());
    }
    // One-sided cells from two probes just behind and just ahead of x; the sideways offset
    // separates the sides when the segment runs along an edge.
    auto behind = mesh.locate(x - eps * dir - 0.37 * eps * left, 0.0);
    auto ahead = mesh.locate(x + eps * dir + 0.37 * eps * left, 0.0);
    if (!behind || !ahead) {
      // Endpoint on ∂Ω: compare the two sides of the segment instead.
      behind = mesh.locate(x - 0.37 * eps * left, 0.0);
      ahead = mesh.locate(x + 0.37 * eps * left, 0.0);
    }
    if (!behind) behind = ahead;
    if (!ahead) ahead = behind;
    if (!behind) behind = ahead = mesh.locate(x);
    if (*behind == *ahead) {
      rows.push_back({s, x, SliceSide::Single, field.value(*behind, x)});
    } else {
      rows.push_back({s, x, SliceSide::Minus, field.value(*behind, x)});
      rows.push_back({s, x, SliceSide::Plus, field.value(*ahead, x)});
    }
  }
  return rows;
}

std::string slice_csv(const std::vector<SliceRow>& rows) {
  std::string out = std::string(kSliceHeader) + "\n";
  for (const SliceRow& r : rows) {
    out += num(r.s) + "," + num(r.x.x) + "," + num(r.x.y) + "," + to_string(r.side) + "," +
           num(r.value) + "\n";
  }
  return out;
}

std::vector<SliceRow> parse_slice_csv(const std::string& text) {
  std::vector<SliceRow> rows;
  std::size_t line = 1;
  for (const auto& f : read_csv(text, kSliceHeader)) {
    ++line;
    SliceRow r;
    r.s = parse_double(f[0], line);
    r.x = {parse_double(f[1], line), parse_double(f[2], line)};
    if (f[3] == to_string(SliceSide::Minus) || f[3] == "-") {
      r.side = SliceSide::Minus;
    } else if (f[3] == "+") {
      r.side = SliceSide::Plus;
    } else if (f[3] == to_string(SliceSide::Single) || f[3] == ".") {
      r.side = SliceSide::Single;
    } else {
      throw Error("line " + std::to_string(line) + ": unknown side '" + f[3] + "'");
    }
    r.value = parse_double(f[4], line);
    rows.push_back(r);
  }
  return rows;
}

SliceDiscrepancy compare_slices(const std::vector<SliceRow>& computed,
                                const std::vector<SliceRow>& reference) {
  if (reference.empty()) throw Error("reference slice is empty");
  std::vector<SliceRow> ref = reference;
  std::stable_sort(ref.begin(), ref.end(),
                   [](const SliceRow& a, const SliceRow& b) { return a.s < b.s; });
  const double tol = 1e-12;
  auto at = [&](double s, SliceSide side) {
    auto lo = std::lower_bound(ref.begin(), ref.end(), s - tol,
                               [](const SliceRow& r, double v) { return r.s < v; });
    auto hi = std::upper_bound(ref.begin(), ref.end(), s + tol,
                               [](double v, const SliceRow& r) { return v < r.s; });
    if (lo != hi) {
      // Rows at this s: first is the left limit, last the right limit.
      if (side == SliceSide::Minus) return lo->value;
      if (side == SliceSide::Plus) return (hi - 1)->value;
      return 0.5 * (lo->value + (hi - 1)->value);
    }
    if (lo == ref.begin()) return lo->value;
    if (hi == ref.end()) return ref.back().value;
    const SliceRow& a = *(lo - 1);
    const SliceRow& b = *hi;
    const double t = (s - a.s) / (b.s - a.s);
    return (1.0 - t) * a.value + t * b.value;
  };
  double vmin = ref.front().value, vmax = vmin;
  for (const SliceRow& r : ref) {
    vmin = std::min(vmin, r.value);
    vmax = std::max(vmax, r.value);
  }
  SliceDiscrepancy out;
  double sum = 0.0;
  for (const SliceRow& r : computed) {
    const double e = std::abs(r.value - at(r.s, r.side));
    sum += e * e;
    if (e > out.max_abs || out.samples == 0) {
      out.max_abs = e;
      out.worst_s = r.s;
    }
    ++out.samples;
  }
  if (out.samples > 0) out.rms = std::sqrt(sum / static_cast<double>(out.samples));
  out.max_rel = vmax > vmin ? out.max_abs / (vmax - vmin) : out.max_abs;
  return out;
}

void write_vtk(std::ostream& out, const Mesh& mesh, const std::vector<NamedField>& fields,
               const std::string& title) {
  for (const NamedField& f : fields) {
    if (!f.field || &f.field->space().mesh() != &mesh) {
      throw Error("field '" + f.name + "' does not live on the mesh being written");
    }
    if (f.name.empty() || f.name.find_first_of(" \t\n") != std::string::npos) {
      throw Error("VTK field names must be non-empty without whitespace: '" + f.name + "'");
    }
  }
  const std::size_t nc = mesh.num_cells();
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << 3 * nc << " double\n";
  for (const Cell& c : mesh.cells()) {
    for (std::size_t v : c.vertices) {
      const Point p = mesh.vertices()[v];
      out << num(p.x) << ' ' << num(p.y) << " 0\n";
    }
  }
  out << "CELLS " << nc << ' ' << 4 * nc << '\n';
  for (std::size_t c = 0; c < nc; ++c) {
    out << "3 " << 3 * c << ' ' << 3 * c + 1 << ' ' << 3 * c + 2 << '\n';
  }
  out << "CELL_TYPES " << nc << '\n';
  for (std::size_t c = 0; c < nc; ++c) out << "5\n";

  out << "CELL_DATA " << nc << "\nSCALARS region int 1\nLOOKUP_TABLE default\n";
  for (const Cell& c : mesh.cells()) out << c.region << '\n';
  for (const NamedField& f : fields) {
    out << "SCALARS " << f.name << "_mean double 1\nLOOKUP_TABLE default\n";
    for (std::size_t c = 0; c < nc; ++c) out << num(f.field->mean(c)) << '\n';
  }
  if (fields.empty()) return;
  out << "POINT_DATA " << 3 * nc << '\n';
  for (const NamedField& f : fields) {
    out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t v : mesh.cells()[c].vertices) {
        out << num(f.field->value(c, mesh.vertices()[v])) << '\n';
      }
    }
  }
}

}  // namespace dfm
