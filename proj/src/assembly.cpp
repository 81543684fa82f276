#include "dfm/assembly.hpp"

#include <array>
#include <cmath>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "dfm/error.hpp"

namespace dfm {

double sigma(Scheme s) {
  switch (s) {
    case Scheme::Sipg: return -1.0;
    case Scheme::Nipg: return 1.0;
    case Scheme::Iipg: return 0.0;
  }
  return -1.0;
}

const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::Sipg: return "sipg";
    case Scheme::Nipg: return "nipg";
    case Scheme::Iipg: return "iipg";
  }
  return "sipg";
}

Scheme parse_scheme(const std::string& name) {
  if (name == "sipg") return Scheme::Sipg;
  if (name == "nipg") return Scheme::Nipg;
  if (name == "iipg") return Scheme::Iipg;
  throw ConfigError("unknown scheme '" + name + "' (expected sipg, nipg or iipg)");
}

void ProblemSpec::validate() const {
  if (!(alpha0 > 0.0)) throw ConfigError("alpha0 must be positive");
  if (!(alpha_tilde0 > 0.0)) throw ConfigError("alpha_tilde0 must be positive");
}

BlockMatrix::BlockMatrix(const DGSpace& space) : space_(&space), m_(space.pattern()) {}

double* BlockMatrix::row(std::size_t row_cell, std::size_t col_cell, int i) {
  const auto& list = space_->block_columns()[row_cell];
  std::size_t k = 0;
  while (k < list.size() && list[k] != col_cell) ++k;
  if (k == list.size()) throw Error("block outside the sparsity pattern");
  const int n = space_->n_local();
  return m_.valuePtr() + m_.outerIndexPtr()[space_->dof(row_cell, i)] + k * static_cast<std::size_t>(n);
}

void BlockMatrix::add(std::size_t row_cell, std::size_t col_cell, const double* block) {
  const int n = space_->n_local();
  for (int i = 0; i < n; ++i) {
    double* r = row(row_cell, col_cell, i);
    for (int j = 0; j < n; ++j) r[j] += block[i * kMaxLocal + j];
  }
}

void BlockMatrix::add_dense(std::size_t row_cell, std::size_t col_cell, const double* block) {
  const int n = space_->n_local();
  for (int i = 0; i < n; ++i) {
    double* r = row(row_cell, col_cell, i);
    for (int j = 0; j < n; ++j) r[j] += block[i * n + j];
  }
}

namespace {

struct Chunk {
  std::vector<std::pair<std::size_t, std::size_t>> keys;  // (row cell, column cell)
  std::vector<double> blocks;                             // n×n row-major per key
  std::vector<std::pair<std::size_t, double>> loads;
};

/// Runs fn(begin, end, chunk) over contiguous ranges. Chunks are concatenated in range order,
/// so the result does not depend on the thread count.
template <class Fn>
void for_chunks(std::size_t n, unsigned threads, std::vector<Chunk>& out, Fn&& fn) {
  const std::size_t parts = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  const std::size_t first = out.size();
  out.resize(first + parts);
  auto range = [&](std::size_t p) {
    return std::pair<std::size_t, std::size_t>{n * p / parts, n * (p + 1) / parts};
  };
  if (parts == 1) {
    fn(std::size_t{0}, n, out[first]);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t p = 0; p < parts; ++p) {
    pool.emplace_back([&, p] {
      const auto [b, e] = range(p);
      fn(b, e, out[first + p]);
    });
  }
  for (auto& t : pool) t.join();
}

double weight(const std::function<double(std::size_t, Point)>& f, std::size_t i, Point x) {
  return f ? f(i, x) : 1.0;
}

struct Trace {
  std::array<double, kMaxLocal> val{};
  std::array<Point, kMaxLocal> grad{};
};

class Assembler {
 public:
  Assembler(const DGSpace& space, const ProblemSpec& spec, const Coefficients& coeffs,
            const AssemblyOptions& options)
      : space_(space),
        mesh_(space.mesh()),
        spec_(spec),
        coeffs_(coeffs),
        parts_(options.parts),
        threads_(std::max(1u, options.threads)),
        n_(space.n_local()),
        k_(space.degree()),
        sigma_(sigma(spec.scheme)) {}

  SparseSystem run() {
    std::vector<Chunk> chunks;
    if (parts_.bulk) {
      for_chunks(mesh_.num_cells(), threads_, chunks,
                 [this](std::size_t b, std::size_t e, Chunk& c) { cells(b, e, c); });
    }
    for_chunks(mesh_.num_edges(), threads_, chunks,
               [this](std::size_t b, std::size_t e, Chunk& c) { edges(b, e, c); });
    if (parts_.fracture) {
      for_chunks(mesh_.fracture_vertices().size(), threads_, chunks,
                 [this](std::size_t b, std::size_t e, Chunk& c) { vertices(b, e, c); });
    }

    SparseSystem sys;
    sys.rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space_.n_dofs()));
    BlockMatrix out(space_);
    const std::size_t nn = static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_);
    for (const Chunk& c : chunks) {
      for (std::size_t b = 0; b < c.keys.size(); ++b) {
        out.add_dense(c.keys[b].first, c.keys[b].second, c.blocks.data() + b * nn);
      }
      for (const auto& [i, v] : c.loads) sys.rhs[static_cast<Eigen::Index>(i)] += v;
    }
    sys.matrix = std::move(out.matrix());
    sys.symmetric = spec_.scheme == Scheme::Sipg;
    return sys;
  }

 private:
  void fill(std::size_t cell, const BasisTable& tab, std::size_t q, Trace& t) const {
    for (int i = 0; i < n_; ++i) {
      t.val[i] = tab.val[q][i];
      t.grad[i] = space_.physical_gradient(cell, tab.ref_grad[q][i]);
    }
  }

  void corner_trace(std::size_t cell, std::size_t vertex, Trace& t) const {
    fill(cell, space_.corner_table(space_.corner_of(cell, vertex)), 0, t);
  }

  // Index into edge.cells of a fracture side cell.
  static int cell_index(const Edge& edge, std::size_t cell) { return edge.cells[0] == cell ? 0 : 1; }

  void add_block(Chunk& out, std::size_t row_cell, std::size_t col_cell, const double* block) const {
    out.keys.emplace_back(row_cell, col_cell);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) out.blocks.push_back(block[i * kMaxLocal + j]);
    }
  }

  void cells(std::size_t begin, std::size_t end, Chunk& out) const {
    const auto& rule = space_.cell_rule();
    const auto& val = space_.cell_table().val;
    const auto& ref = space_.cell_table().ref_grad;
    std::array<double, kMaxLocal * kMaxLocal> block{};
    std::array<double, kMaxLocal> load{};
    std::array<Point, kMaxLocal> g{};
    for (std::size_t c = begin; c < end; ++c) {
      block.fill(0.0);
      load.fill(0.0);
      const int region = mesh_.cells()[c].region;
      const Point inside = mesh_.centroid(c);
      const double det = space_.det_j(c);
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const Point x = space_.to_physical(c, rule.points[q]);
        const double w = rule.weights[q] * det;
        const Tensor2 K = weight(coeffs_.cell, c, x) * spec_.K(x, region);
        for (int i = 0; i < n_; ++i) g[i] = space_.physical_gradient(c, ref[q][i]);
        for (int j = 0; j < n_; ++j) {
          const Point kg = K.apply(g[j]);
          for (int i = 0; i < n_; ++i) block[i * kMaxLocal + j] += w * dot(kg, g[i]);
        }
        if (spec_.source) {
          const double f = w * spec_.source(x, inside);
          for (int i = 0; i < n_; ++i) load[i] += f * val[q][i];
        }
      }
      add_block(out, c, c, block.data());
      for (int i = 0; i < n_; ++i) {
        if (load[i] != 0.0) out.loads.emplace_back(space_.dof(c, i), load[i]);
      }
    }
  }

  void edges(std::size_t begin, std::size_t end, Chunk& out) const {
    for (std::size_t e = begin; e < end; ++e) {
      const Edge& edge = mesh_.edges()[e];
      switch (edge.cls) {
        case EdgeClass::Interior:
          if (parts_.faces) interior_face(e, out);
          break;
        case EdgeClass::Fracture:
          if (parts_.faces) interior_face(e, out);
          if (parts_.fracture) fracture_edge(e, out);
          break;
        case EdgeClass::Barrier:
          if (parts_.barrier) barrier_edge(e, out);
          break;
        case EdgeClass::Dirichlet:
          if (parts_.faces) dirichlet_edge(e, out);
          break;
        case EdgeClass::Neumann:
          if (parts_.faces) neumann_edge(e, out);
          break;
      }
    }
  }

  Point edge_point(const Edge& edge, double t) const {
    const Point a = mesh_.vertices()[edge.vertices[0]];
    const Point b = mesh_.vertices()[edge.vertices[1]];
    return a + t * (b - a);
  }

  void interior_face(std::size_t e, Chunk& out) const {
    const Edge& edge = mesh_.edges()[e];
    const auto& rule = space_.edge_rule();
    const double alpha = edge_penalty(spec_.alpha0, k_, edge.length);
    const std::array<std::size_t, 2> cell{edge.cells[0], edge.cells[1]};
    const std::array<double, 2> sg{1.0, -1.0};
    std::array<std::array<double, kMaxLocal * kMaxLocal>, 4> block{};
    std::array<Trace, 2> tr;
    std::array<std::array<double, kMaxLocal>, 2> flux{};
    const std::array<const BasisTable*, 2> tab{&space_.trace_table(e, 0), &space_.trace_table(e, 1)};
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = edge_point(edge, rule.points[q]);
      const double w = rule.weights[q] * edge.length;
      std::array<double, 2> lam{};
      for (int s = 0; s < 2; ++s) {
        fill(cell[s], *tab[s], q, tr[s]);
        lam[s] = weight(coeffs_.cell, cell[s], x);
        const Tensor2 K = lam[s] * spec_.K(x, mesh_.cells()[cell[s]].region);
        for (int i = 0; i < n_; ++i) flux[s][i] = dot(K.apply(tr[s].grad[i]), edge.normal);
      }
      const double pen = alpha * 0.5 * (lam[0] + lam[1]);
      for (int ts = 0; ts < 2; ++ts) {
        for (int rs = 0; rs < 2; ++rs) {
          double* b = block[ts * 2 + rs].data();
          for (int i = 0; i < n_; ++i) {
            const double ji = sg[ts] * tr[ts].val[i];
            for (int j = 0; j < n_; ++j) {
              const double jj = sg[rs] * tr[rs].val[j];
              double v = pen * jj * ji;
              if (parts_.consistency) {
                v += -0.5 * flux[rs][j] * ji + sigma_ * 0.5 * flux[ts][i] * jj;
              }
              b[i * kMaxLocal + j] += w * v;
            }
          }
        }
      }
    }
    for (int ts = 0; ts < 2; ++ts) {
      for (int rs = 0; rs < 2; ++rs) add_block(out, cell[ts], cell[rs], block[ts * 2 + rs].data());
    }
  }

  void barrier_edge(std::size_t e, Chunk& out) const {
    const Edge& edge = mesh_.edges()[e];
    const auto& f = mesh_.features()[edge.feature];
    const auto& rule = space_.edge_rule();
    const std::array<std::size_t, 2> cell{edge.cells[0], edge.cells[1]};
    const std::array<double, 2> sg{1.0, -1.0};
    std::array<std::array<double, kMaxLocal * kMaxLocal>, 4> block{};
    std::array<Trace, 2> tr;
    const std::array<const BasisTable*, 2> tab{&space_.trace_table(e, 0), &space_.trace_table(e, 1)};
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = edge_point(edge, rule.points[q]);
      const double w = rule.weights[q] * edge.length;
      std::array<double, 2> lam{};
      for (int s = 0; s < 2; ++s) {
        for (int i = 0; i < n_; ++i) tr[s].val[i] = tab[s]->val[q][i];
        lam[s] = weight(coeffs_.cell, cell[s], x);
      }
      const double coef = 0.5 * (lam[0] + lam[1]) * f.permeability / f.aperture;
      for (int ts = 0; ts < 2; ++ts) {
        for (int rs = 0; rs < 2; ++rs) {
          double* b = block[ts * 2 + rs].data();
          for (int i = 0; i < n_; ++i) {
            for (int j = 0; j < n_; ++j) {
              b[i * kMaxLocal + j] += w * coef * sg[ts] * tr[ts].val[i] * sg[rs] * tr[rs].val[j];
            }
          }
        }
      }
    }
    for (int ts = 0; ts < 2; ++ts) {
      for (int rs = 0; rs < 2; ++rs) add_block(out, cell[ts], cell[rs], block[ts * 2 + rs].data());
    }
  }

  void dirichlet_edge(std::size_t e, Chunk& out) const {
    const Edge& edge = mesh_.edges()[e];
    const auto& rule = space_.edge_rule();
    const std::size_t cell = edge.cells[0];
    const int region = mesh_.cells()[cell].region;
    const Point inside = mesh_.centroid(cell);
    const double alpha = edge_penalty(spec_.alpha0, k_, edge.length);
    std::array<double, kMaxLocal * kMaxLocal> block{};
    std::array<double, kMaxLocal> load{};
    std::array<double, kMaxLocal> flux{};
    Trace tr;
    const BasisTable& tab = space_.trace_table(e, 0);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = edge_point(edge, rule.points[q]);
      const double w = rule.weights[q] * edge.length;
      fill(cell, tab, q, tr);
      const double lam =
          coeffs_.dirichlet_edge ? coeffs_.dirichlet_edge(e, x) : weight(coeffs_.cell, cell, x);
      const Tensor2 K = lam * spec_.K(x, region);
      for (int i = 0; i < n_; ++i) flux[i] = dot(K.apply(tr.grad[i]), edge.normal);
      const double gd = spec_.dirichlet ? spec_.dirichlet(x, inside) : 0.0;
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          double v = alpha * lam * tr.val[j] * tr.val[i];
          if (parts_.consistency) v += -flux[j] * tr.val[i] + sigma_ * flux[i] * tr.val[j];
          block[i * kMaxLocal + j] += w * v;
        }
        double l = alpha * lam * gd * tr.val[i];
        if (parts_.consistency) l += sigma_ * gd * flux[i];
        load[i] += w * l;
      }
    }
    add_block(out, cell, cell, block.data());
    for (int i = 0; i < n_; ++i) out.loads.emplace_back(space_.dof(cell, i), load[i]);
  }

  void neumann_edge(std::size_t e, Chunk& out) const {
    if (!spec_.neumann && !coeffs_.neumann_flux) return;
    const Edge& edge = mesh_.edges()[e];
    const auto& rule = space_.edge_rule();
    const std::size_t cell = edge.cells[0];
    const Point inside = mesh_.centroid(cell);
    std::array<double, kMaxLocal> load{};
    const BasisTable& tab = space_.trace_table(e, 0);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = edge_point(edge, rule.points[q]);
      const double w = rule.weights[q] * edge.length;
      const auto& val = tab.val[q];
      const double g = coeffs_.neumann_flux ? coeffs_.neumann_flux(e, x) : spec_.neumann(x, inside);
      for (int i = 0; i < n_; ++i) load[i] += w * g * val[i];
    }
    for (int i = 0; i < n_; ++i) out.loads.emplace_back(space_.dof(cell, i), load[i]);
  }

  void fracture_edge(std::size_t e, Chunk& out) const {
    const Edge& edge = mesh_.edges()[e];
    const auto& f = mesh_.features()[edge.feature];
    const auto& rule = space_.edge_rule();
    const std::array<std::size_t, 2> cell = edge.side_cells;
    if (cell[0] == kNone || cell[1] == kNone) throw Error("fracture edge without side cells");
    std::array<std::array<double, kMaxLocal * kMaxLocal>, 2> block{};
    std::array<std::array<double, kMaxLocal>, 2> load{};
    Trace tr;
    const Point inside = mesh_.centroid(cell[0]);
    const std::array<const BasisTable*, 2> tab{&space_.trace_table(e, cell_index(edge, cell[0])),
                                               &space_.trace_table(e, cell_index(edge, cell[1]))};
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point x = edge_point(edge, rule.points[q]);
      const double w = rule.weights[q] * edge.length;
      const double qf = spec_.fracture_source ? spec_.fracture_source(x, inside) : 0.0;
      for (int s = 0; s < 2; ++s) {
        fill(cell[s], *tab[s], q, tr);
        const double coef = 0.5 * f.aperture * f.permeability * weight(coeffs_.cell, cell[s], x);
        std::array<double, kMaxLocal> d{};
        for (int i = 0; i < n_; ++i) d[i] = dot(tr.grad[i], edge.tangent);
        for (int i = 0; i < n_; ++i) {
          for (int j = 0; j < n_; ++j) block[s][i * kMaxLocal + j] += w * coef * d[j] * d[i];
          load[s][i] += w * qf * 0.5 * tr.val[i];
        }
      }
    }
    for (int s = 0; s < 2; ++s) {
      add_block(out, cell[s], cell[s], block[s].data());
      if (spec_.fracture_source) {
        for (int i = 0; i < n_; ++i) out.loads.emplace_back(space_.dof(cell[s], i), load[s][i]);
      }
    }
  }

  void vertices(std::size_t begin, std::size_t end, Chunk& out) const {
    const auto& records = mesh_.fracture_vertices();
    for (std::size_t r = begin; r < end; ++r) {
      const FractureVertex& rec = records[r];
      if (const auto* ic = std::get_if<InteriorCoupling>(&rec.coupling)) {
        interior_vertex(rec, *ic, out);
      } else if (const auto* bc = std::get_if<BoundaryCoupling>(&rec.coupling)) {
        if (bc->dirichlet) dirichlet_vertex(r, rec, *bc, out);
      }
    }
  }

  void interior_vertex(const FractureVertex& rec, const InteriorCoupling& ic, Chunk& out) const {
    const auto& f = mesh_.features()[rec.feature];
    const double akf = f.aperture * f.permeability;
    const Point p = mesh_.vertices()[rec.vertex];
    const double pen = edge_penalty(spec_.alpha_tilde0, k_, ic.h_star);
    const std::array<Point, 2> tangent{mesh_.edges()[ic.e1].tangent, mesh_.edges()[ic.e2].tangent};
    const std::array<double, 2> sg{1.0, -1.0};
    for (int side = 0; side < 2; ++side) {
      const std::array<std::size_t, 2> cell = ic.cells[side];
      std::array<Trace, 2> tr;
      std::array<std::array<double, kMaxLocal>, 2> flux{};
      std::array<double, 2> lam{};
      for (int X = 0; X < 2; ++X) {
        corner_trace(cell[X], rec.vertex, tr[X]);
        lam[X] = weight(coeffs_.cell, cell[X], p);
        for (int i = 0; i < n_; ++i) flux[X][i] = akf * lam[X] * dot(tr[X].grad[i], tangent[X]);
      }
      const double penw = pen * 0.5 * (lam[0] + lam[1]);
      for (int Y = 0; Y < 2; ++Y) {
        for (int X = 0; X < 2; ++X) {
          std::array<double, kMaxLocal * kMaxLocal> block{};
          for (int i = 0; i < n_; ++i) {
            const double ji = sg[Y] * tr[Y].val[i];
            for (int j = 0; j < n_; ++j) {
              const double jj = sg[X] * tr[X].val[j];
              double v = penw * jj * ji;
              if (parts_.consistency) {
                v += -0.5 * (0.5 * flux[X][j]) * ji + 0.5 * sigma_ * (0.5 * flux[Y][i]) * jj;
              }
              block[i * kMaxLocal + j] = v;
            }
          }
          add_block(out, cell[Y], cell[X], block.data());
        }
      }
    }
  }

  void dirichlet_vertex(std::size_t r, const FractureVertex& rec, const BoundaryCoupling& bc,
                        Chunk& out) const {
    const auto& f = mesh_.features()[rec.feature];
    const double akf = f.aperture * f.permeability;
    const Point p = mesh_.vertices()[rec.vertex];
    const double pen = edge_penalty(spec_.alpha_tilde0, k_, bc.h_e);
    const Point tangent = mesh_.edges()[bc.edge].tangent;
    const double sign = bc.sign;
    for (int side = 0; side < 2; ++side) {
      const std::size_t cell = bc.cells[side];
      Trace tr;
      corner_trace(cell, rec.vertex, tr);
      const double lam = coeffs_.dirichlet_vertex ? coeffs_.dirichlet_vertex(r, side)
                                                  : weight(coeffs_.cell, cell, p);
      std::array<double, kMaxLocal> flux{};
      for (int i = 0; i < n_; ++i) flux[i] = akf * lam * dot(tr.grad[i], tangent);
      const double gd = spec_.dirichlet ? spec_.dirichlet(p, mesh_.centroid(cell)) : 0.0;
      std::array<double, kMaxLocal * kMaxLocal> block{};
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          double v = pen * lam * tr.val[j] * tr.val[i];
          if (parts_.consistency) {
            v += -0.5 * flux[j] * sign * tr.val[i] + 0.5 * sigma_ * flux[i] * sign * tr.val[j];
          }
          block[i * kMaxLocal + j] = v;
        }
        double l = pen * lam * tr.val[i] * gd;
        if (parts_.consistency) l += 0.5 * sigma_ * flux[i] * sign * gd;
        out.loads.emplace_back(space_.dof(cell, i), l);
      }
      add_block(out, cell, cell, block.data());
    }
  }

  const DGSpace& space_;
  const Mesh& mesh_;
  const ProblemSpec& spec_;
  const Coefficients& coeffs_;
  AssemblyParts parts_;
  unsigned threads_;
  int n_;
  int k_;
  double sigma_;
};

SparseSystem assemble_only(const DGSpace& space, const ProblemSpec& spec, AssemblyParts parts) {
  AssemblyOptions opt;
  opt.parts = parts;
  return assemble(space, spec, {}, opt);
}

}  // namespace

SparseSystem assemble(const DGSpace& space, const ProblemSpec& spec, const Coefficients& coeffs,
                      const AssemblyOptions& options) {
  spec.validate();
  if (space.degree() < 1) throw ConfigError("interior penalty needs polynomial degree >= 1");
  return Assembler(space, spec, coeffs, options).run();
}

SparseSystem assemble_bulk(const DGSpace& space, const ProblemSpec& spec) {
  return assemble_only(space, spec, {true, false, false, false, true});
}

SparseSystem assemble_interior_faces(const DGSpace& space, const ProblemSpec& spec) {
  return assemble_only(space, spec, {false, true, false, false, true});
}

SparseSystem assemble_barrier(const DGSpace& space, const ProblemSpec& spec) {
  return assemble_only(space, spec, {false, false, true, false, true});
}

SparseSystem assemble_fracture(const DGSpace& space, const ProblemSpec& spec) {
  return assemble_only(space, spec, {false, false, false, true, true});
}

double DGNormParts::total() const {
  return std::sqrt(gradient + jump + barrier + tangential_minus + tangential_plus + vertex_minus +
                   vertex_plus);
}

DGNormParts dg_norm_parts(const DGSpace& space, const ProblemSpec& spec, const CellValueFn& value,
                          const CellGradFn& grad) {
  const Mesh& mesh = space.mesh();
  const int k = space.degree();
  DGNormParts out;

  const auto& rule = space.error_rule();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const double det = space.det_j(c);
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const Point g = grad(c, space.to_physical(c, rule.points[q]));
      out.gradient += rule.weights[q] * det * dot(g, g);
    }
  }

  const LineRule line = gauss_legendre(k + 4);
  for (const Edge& e : mesh.edges()) {
    if (e.cls == EdgeClass::Neumann) continue;
    const Point a = mesh.vertices()[e.vertices[0]];
    const Point b = mesh.vertices()[e.vertices[1]];
    double jump2 = 0.0, tm = 0.0, tp = 0.0;
    for (std::size_t q = 0; q < line.size(); ++q) {
      const Point x = a + line.points[q] * (b - a);
      const double w = line.weights[q] * e.length;
      const double v0 = value(e.cells[0], x);
      const double jmp = e.is_boundary() ? v0 : v0 - value(e.cells[1], x);
      jump2 += w * jmp * jmp;
      if (e.cls == EdgeClass::Fracture) {
        const double dm = dot(grad(e.side_cells[0], x), e.tangent);
        const double dp = dot(grad(e.side_cells[1], x), e.tangent);
        tm += w * dm * dm;
        tp += w * dp * dp;
      }
    }
    if (e.cls == EdgeClass::Barrier) {
      const auto& f = mesh.features()[e.feature];
      out.barrier += f.permeability / f.aperture * jump2;
    } else {
      out.jump += edge_penalty(spec.alpha0, k, e.length) * jump2;
      out.tangential_minus += tm;
      out.tangential_plus += tp;
    }
  }

  for (const FractureVertex& rec : mesh.fracture_vertices()) {
    const Point p = mesh.vertices()[rec.vertex];
    std::array<double, 2> jmp{};
    double pen = 0.0;
    if (const auto* ic = std::get_if<InteriorCoupling>(&rec.coupling)) {
      pen = edge_penalty(spec.alpha_tilde0, k, ic->h_star);
      for (int s = 0; s < 2; ++s) jmp[s] = value(ic->cells[s][0], p) - value(ic->cells[s][1], p);
    } else if (const auto* bc = std::get_if<BoundaryCoupling>(&rec.coupling)) {
      if (!bc->dirichlet) continue;
      pen = edge_penalty(spec.alpha_tilde0, k, bc->h_e);
      for (int s = 0; s < 2; ++s) jmp[s] = bc->sign * value(bc->cells[s], p);
    } else {
      continue;
    }
    out.vertex_minus += pen * jmp[0] * jmp[0];
    out.vertex_plus += pen * jmp[1] * jmp[1];
  }
  return out;
}

double dg_norm(const DGField& field, const ProblemSpec& spec) {
  return dg_norm_parts(
             field.space(), spec,
             [&](std::size_t c, Point x) { return field.value_unchecked(c, x); },
             [&](std::size_t c, Point x) { return field.gradient_unchecked(c, x); })
      .total();
}

double dg_error(const DGField& field, const ProblemSpec& spec, const ScalarFn& exact,
                const VectorFn& exact_grad) {
  const Mesh& mesh = field.space().mesh();
  return dg_norm_parts(
             field.space(), spec,
             [&](std::size_t c, Point x) {
               return exact(x, mesh.centroid(c)) - field.value_unchecked(c, x);
             },
             [&](std::size_t c, Point x) {
               return exact_grad(x, mesh.centroid(c)) - field.gradient_unchecked(c, x);
             })
      .total();
}

double residual_check(const DGSpace& space, const ProblemSpec& spec, const ScalarFn& exact) {
  const SparseSystem sys = assemble(space, spec);
  const DGField p = project(space, exact);
  return (sys.matrix * p.coeffs() - sys.rhs).cwiseAbs().maxCoeff();
}

}  // namespace dfm
