#include "dfm/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dfm/error.hpp"
#include "json.hpp"

namespace dfm {

namespace {

using json = nlohmann::json;

// Object view that records which keys were read, so leftovers can be reported.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& get(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(where() + " is missing '" + key + "'");
    return j_.at(key);
  }

  Obj child(const std::string& key) { return Obj(get(key), sub(key)); }

  double number(const std::string& key) {
    const json& v = get(key);
    if (!v.is_number()) throw ConfigError(sub(key) + " must be a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  double positive(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v > 0.0)) throw ConfigError(sub(key) + " must be positive");
    return v;
  }

  long long integer(const std::string& key) {
    const json& v = get(key);
    if (!v.is_number_integer()) throw ConfigError(sub(key) + " must be an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& key, long long fallback) {
    return has(key) ? integer(key) : fallback;
  }

  std::string text(const std::string& key) {
    const json& v = get(key);
    if (!v.is_string()) throw ConfigError(sub(key) + " must be a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) {
    return has(key) ? text(key) : fallback;
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = get(key);
    if (!v.is_boolean()) throw ConfigError(sub(key) + " must be true or false");
    return v.get<bool>();
  }

  Point point(const std::string& key) {
    const json& v = get(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(sub(key) + " must be [x, y]");
    }
    return {v[0].get<double>(), v[1].get<double>()};
  }

  /// Throws on keys that were never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where() + ": unknown key '" + it.key() + "'");
    }
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "configuration" : path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class T, class F>
T parse_enum(const std::string& path, const std::string& value, F&& parse) {
  try {
    return parse(value);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

DiagonalPattern parse_pattern(const std::string& s) {
  if (s == "forward") return DiagonalPattern::Forward;
  if (s == "backward") return DiagonalPattern::Backward;
  if (s == "alternating") return DiagonalPattern::Alternating;
  throw ConfigError("unknown pattern '" + s + "' (forward, backward, alternating)");
}

FeatureKind parse_kind(const std::string& s) {
  if (s == "conductive") return FeatureKind::Conductive;
  if (s == "blocking") return FeatureKind::Blocking;
  throw ConfigError("unknown feature kind '" + s + "' (conductive, blocking)");
}

BoundarySide parse_side(const std::string& s) {
  if (s == "bottom") return BoundarySide::Bottom;
  if (s == "right") return BoundarySide::Right;
  if (s == "top") return BoundarySide::Top;
  if (s == "left") return BoundarySide::Left;
  throw ConfigError("unknown boundary side '" + s + "' (bottom, right, top, left)");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void read_mesh(Obj o, RunConfig& c, const std::filesystem::path& base) {
  const bool structured = o.has("structured"), file = o.has("file");
  if (structured == file) throw ConfigError("mesh needs exactly one of 'structured' or 'file'");
  if (structured) {
    Obj s = o.child("structured");
    StructuredGridSpec g;
    const long long n = s.integer("n", 0);
    g.nx = static_cast<std::size_t>(s.integer("nx", n));
    g.ny = static_cast<std::size_t>(s.integer("ny", n));
    if (s.integer("nx", n) <= 0 || s.integer("ny", n) <= 0) {
      throw ConfigError("mesh.structured needs positive 'n' or 'nx' and 'ny'");
    }
    if (s.has("origin")) g.origin = s.point("origin");
    g.width = s.positive("width", 1.0);
    g.height = s.positive("height", 1.0);
    g.pattern = parse_enum<DiagonalPattern>("mesh.structured.pattern",
                                            s.text("pattern", "backward"), parse_pattern);
    s.finish();
    c.structured = g;
  } else {
    c.mesh_file = resolve(base, o.text("file"));
  }
  const std::string rule = o.text("intersection_rule", "barrier-priority");
  if (rule == "barrier-priority") {
    c.rule = IntersectionRule::BarrierPriority;
  } else if (rule == "fracture-priority") {
    c.rule = IntersectionRule::FracturePriority;
  } else {
    throw ConfigError("mesh.intersection_rule must be barrier-priority or fracture-priority");
  }
  o.finish();
}

void read_fractures(Obj o, RunConfig& c, const std::filesystem::path& base) {
  if (o.has("file")) c.fracture_file = resolve(base, o.text("file"));
  if (o.has("inline")) {
    const json& list = o.get("inline");
    if (!list.is_array()) throw ConfigError("fractures.inline must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      Obj f(list[i], "fractures.inline[" + std::to_string(i) + "]");
      FractureSegmentSpec s;
      s.start = f.point("start");
      s.end = f.point("end");
      s.kind = parse_enum<FeatureKind>(f.sub("kind"), f.text("kind"), parse_kind);
      s.aperture = f.number("aperture");
      s.permeability = f.number("permeability");
      f.finish();
      c.fractures.push_back(s);
    }
  }
  if (o.has("kind")) c.kind = parse_enum<FeatureKind>("fractures.kind", o.text("kind"), parse_kind);
  if (o.has("aperture")) c.aperture = o.positive("aperture", 1.0);
  if (o.has("permeability")) c.permeability = o.positive("permeability", 1.0);
  o.finish();
}

void read_physics(Obj o, RunConfig& c) {
  if (o.has("manufactured")) {
    c.manufactured = parse_enum<ManufacturedCase>("physics.manufactured", o.text("manufactured"),
                                                  parse_manufactured_case);
  }
  if (o.has("permeability")) {
    const json& k = o.get("permeability");
    if (k.is_number()) {
      c.matrix_permeability = Tensor2::identity(k.get<double>());
    } else if (k.is_array() && k.size() == 2 && k[0].is_array() && k[1].is_array() &&
               k[0].size() == 2 && k[1].size() == 2) {
      try {
        c.matrix_permeability = {k[0][0].get<double>(), k[0][1].get<double>(),
                                 k[1][0].get<double>(), k[1][1].get<double>()};
      } catch (const json::exception&) {
        throw ConfigError("physics.permeability entries must be numbers");
      }
    } else {
      throw ConfigError("physics.permeability must be a number or [[kxx, kxy], [kyx, kyy]]");
    }
    if (!c.matrix_permeability.is_spd()) {
      throw ConfigError("physics.permeability must be symmetric positive definite");
    }
  }
  if (o.has("boundary")) {
    Obj b = o.child("boundary");
    for (const char* side : {"bottom", "right", "top", "left"}) {
      if (!b.has(side)) continue;
      Obj s = b.child(side);
      SideCondition cond;
      const std::string type = s.text("type");
      if (type == "dirichlet") {
        cond.type = EdgeClass::Dirichlet;
      } else if (type == "neumann") {
        cond.type = EdgeClass::Neumann;
      } else {
        throw ConfigError(s.sub("type") + " must be dirichlet or neumann");
      }
      cond.value = s.number("value");
      s.finish();
      c.boundary[parse_side(side)] = cond;
    }
    b.finish();
  }
  c.source = o.number("source", 0.0);
  c.fracture_source = o.number("fracture_source", 0.0);
  o.finish();
}

void read_scheme(Obj o, RunConfig& c) {
  c.degree = static_cast<int>(o.integer("degree", 1));
  if (c.degree < 1 || c.degree > ReferenceBasis::kMaxDegree) {
    throw ConfigError("scheme.degree must be between 1 and " +
                      std::to_string(ReferenceBasis::kMaxDegree));
  }
  c.scheme = parse_enum<Scheme>("scheme.variant", o.text("variant", "sipg"), parse_scheme);
  c.alpha0 = o.number("alpha0", 10.0);
  c.alpha_tilde0 = o.number("alpha_tilde0", 10.0);
  c.beta0 = o.number("beta0", 2.0);
  c.beta_tilde0 = o.number("beta_tilde0", 2.0);
  c.tvb_m = o.number("tvb_m", 0.0);
  c.cfl = o.number("cfl", 0.0);
  if (c.tvb_m < 0.0) throw ConfigError("scheme.tvb_m must be non-negative");
  if (c.cfl < 0.0 || c.cfl > 1.0) throw ConfigError("scheme.cfl must lie in [0, 1]");
  o.finish();
}

void read_solver(Obj o, RunConfig& c) {
  SolverConfig& s = c.solver;
  s.method = parse_enum<SolverMethod>("solver.method", o.text("method", "auto"), parse_solver_method);
  s.preconditioner = parse_enum<Preconditioner>("solver.preconditioner",
                                                o.text("preconditioner", "default"),
                                                parse_preconditioner);
  s.tolerance = o.number("tolerance", s.tolerance);
  s.max_iterations = static_cast<int>(o.integer("max_iterations", s.max_iterations));
  const long long limit = o.integer("direct_limit", static_cast<long long>(s.direct_limit));
  if (limit < 0) throw ConfigError("solver.direct_limit must be non-negative");
  s.direct_limit = static_cast<std::size_t>(limit);
  o.finish();
}

void read_convergence(Obj o, RunConfig& c) {
  ConvergenceConfig cc;
  cc.which = parse_enum<ManufacturedCase>("convergence.case", o.text("case"), parse_manufactured_case);
  for (const json& d : o.get("degrees")) {
    if (!d.is_number_integer() || d.get<int>() < 1 || d.get<int>() > ReferenceBasis::kMaxDegree) {
      throw ConfigError("convergence.degrees must hold degrees between 1 and " +
                        std::to_string(ReferenceBasis::kMaxDegree));
    }
    cc.degrees.push_back(d.get<int>());
  }
  for (const json& n : o.get("levels")) {
    if (!n.is_number_integer() || n.get<long long>() <= 0) {
      throw ConfigError("convergence.levels must be positive cell counts per side");
    }
    cc.levels.push_back(n.get<std::size_t>());
  }
  if (cc.degrees.empty() || cc.levels.empty()) {
    throw ConfigError("convergence needs at least one degree and one level");
  }
  cc.pattern = parse_enum<DiagonalPattern>("convergence.pattern", o.text("pattern", "backward"),
                                           parse_pattern);
  o.finish();
  c.convergence = cc;
}

void read_twophase(Obj o, RunConfig& c) {
  TwoPhaseConfig t;
  t.phi_m = o.number("phi_m", t.phi_m);
  t.phi_f = o.number("phi_f", t.phi_f);
  t.mu_n = o.number("mu_n", t.mu_n);
  t.mu_w = o.number("mu_w", t.mu_w);
  t.s_initial = o.number("s_initial", t.s_initial);
  t.s_inflow = o.number("s_inflow", t.s_inflow);
  t.end_time = o.number("end_time");
  t.dt_max = o.number("dt_max", 0.0);
  if (o.has("output_times")) {
    const json& list = o.get("output_times");
    if (!list.is_array()) throw ConfigError("twophase.output_times must be an array");
    for (const json& v : list) {
      if (!v.is_number()) throw ConfigError("twophase.output_times must hold numbers");
      t.output_times.push_back(v.get<double>());
    }
  }
  t.tvb_limiter = o.boolean("tvb_limiter", true);
  t.bound_limiter = o.boolean("bound_limiter", true);
  o.finish();
  if (!(t.end_time > 0.0)) throw ConfigError("twophase.end_time must be positive");
  for (double s : {t.s_initial, t.s_inflow}) {
    if (s < 0.0 || s > 1.0) throw ConfigError("twophase saturations must lie in [0, 1]");
  }
  double last = 0.0;
  for (double v : t.output_times) {
    if (v <= last || v > t.end_time) {
      throw ConfigError("twophase.output_times must increase within (0, end_time]");
    }
    last = v;
  }
  c.twophase = t;
}

void read_outputs(Obj o, RunConfig& c, const std::filesystem::path& base) {
  if (o.has("slices")) {
    const json& list = o.get("slices");
    if (!list.is_array()) throw ConfigError("outputs.slices must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      Obj s(list[i], "outputs.slices[" + std::to_string(i) + "]");
      SliceOutput out;
      out.name = s.text("name");
      if (out.name.empty() || out.name.find_first_of("/\\ ") != std::string::npos) {
        throw ConfigError(s.sub("name") + " must be a plain file stem");
      }
      out.request.start = s.point("start");
      out.request.end = s.point("end");
      const long long n = s.integer("samples", 200);
      if (n <= 0) throw ConfigError(s.sub("samples") + " must be positive");
      out.request.samples = static_cast<std::size_t>(n);
      if (s.has("reference")) out.reference = resolve(base, s.text("reference"));
      s.finish();
      c.slices.push_back(out);
    }
  }
  c.write_vtk = o.boolean("vtk", true);
  c.write_tables = o.boolean("tables", true);
  o.finish();
}

std::string read_file(const std::filesystem::path& p, const char* what) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(std::string("missing ") + what + ": " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  Obj root(doc, "");
  RunConfig c;
  if (!root.has("version")) throw ConfigError("configuration is missing 'version'");
  c.version = static_cast<int>(root.integer("version"));
  if (c.version != kConfigVersion) {
    throw ConfigError("unsupported configuration version " + std::to_string(c.version) +
                      " (expected " + std::to_string(kConfigVersion) + ")");
  }
  c.name = root.text("name", "");
  read_mesh(root.child("mesh"), c, base_dir);
  if (root.has("fractures")) read_fractures(root.child("fractures"), c, base_dir);
  if (root.has("physics")) read_physics(root.child("physics"), c);
  if (root.has("scheme")) read_scheme(root.child("scheme"), c);
  if (root.has("solver")) read_solver(root.child("solver"), c);
  if (root.has("convergence")) read_convergence(root.child("convergence"), c);
  if (root.has("twophase")) read_twophase(root.child("twophase"), c);
  if (root.has("outputs")) read_outputs(root.child("outputs"), c, base_dir);
  root.finish();

  if (c.manufactured && (!c.fracture_file.empty() || !c.fractures.empty())) {
    throw ConfigError("physics.manufactured fixes the features; remove 'fractures'");
  }
  ProblemSpec probe;
  probe.alpha0 = c.alpha0;
  probe.alpha_tilde0 = c.alpha_tilde0;
  try {
    probe.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("scheme: ") + e.what());
  }
  c.solver.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  return parse_config(read_file(file, "configuration"), file.parent_path());
}

std::vector<FractureSegmentSpec> build_features(const RunConfig& c) {
  if (c.manufactured) return manufactured(*c.manufactured).features;
  std::vector<FractureSegmentSpec> out;
  if (!c.fracture_file.empty()) {
    out = parse_fracture_csv(read_file(c.fracture_file, "fracture file"));
  }
  out.insert(out.end(), c.fractures.begin(), c.fractures.end());
  return out;
}

namespace {

// Overrides applied after the mesh tags were matched to the features as listed in the file.
std::vector<FractureSegmentSpec> overridden(const RunConfig& c, std::vector<FractureSegmentSpec> f) {
  for (auto& s : f) {
    if (c.kind) s.kind = *c.kind;
    if (c.aperture) s.aperture = *c.aperture;
    if (c.permeability) s.permeability = *c.permeability;
    s.validate();
  }
  return f;
}

EdgeClass side_class(const RunConfig& c, BoundarySide side) {
  const auto it = c.boundary.find(side);
  return it == c.boundary.end() ? EdgeClass::Dirichlet : it->second.type;
}

}  // namespace

Mesh build_mesh(const RunConfig& c) {
  const std::vector<FractureSegmentSpec> listed = build_features(c);
  const std::vector<FractureSegmentSpec> features = overridden(c, listed);
  Mesh::BuildOptions options;
  options.rule = c.rule;
  if (c.structured) {
    std::map<BoundarySide, EdgeClass> sides;
    for (BoundarySide s : {BoundarySide::Bottom, BoundarySide::Right, BoundarySide::Top,
                           BoundarySide::Left}) {
      sides[s] = c.manufactured ? EdgeClass::Dirichlet : side_class(c, s);
    }
    return generate_structured(*c.structured, features, sides, options);
  }
  // File tags follow the standard numbering of the features as listed; the classes follow
  // the (possibly overridden) kinds.
  TagMap tags = TagMap::standard(listed);
  for (auto& [tag, t] : tags.lines) {
    if (t.feature >= 0) {
      t.cls = features[static_cast<std::size_t>(t.feature)].kind == FeatureKind::Blocking
                  ? EdgeClass::Barrier
                  : EdgeClass::Fracture;
    }
  }
  const Mesh raw = import_gmsh(read_file(c.mesh_file, "mesh file"), tags, features, options);
  const BoundingBox box = raw.bounding_box();
  return raw.with_boundary_classes([&](const Edge& e) {
    return c.manufactured ? EdgeClass::Dirichlet : side_class(c, boundary_side(e.midpoint, box));
  });
}

ProblemSpec build_problem(const RunConfig& c, const Mesh& mesh) {
  ProblemSpec p;
  if (c.manufactured) {
    p = manufactured_problem(manufactured(*c.manufactured), c.scheme, c.alpha0, c.alpha_tilde0);
    return p;
  }
  p.scheme = c.scheme;
  p.alpha0 = c.alpha0;
  p.alpha_tilde0 = c.alpha_tilde0;
  const Tensor2 k = c.matrix_permeability;
  if (k.xx != 1.0 || k.xy != 0.0 || k.yx != 0.0 || k.yy != 1.0) {
    p.permeability = [k](Point, int) { return k; };
  }
  if (c.source != 0.0) p.source = [v = c.source](Point, Point) { return v; };
  if (c.fracture_source != 0.0) p.fracture_source = [v = c.fracture_source](Point, Point) { return v; };

  // Side data is looked up by position on the mesh's bounding box.
  const auto boundary = c.boundary;
  const BoundingBox box = mesh.bounding_box();
  auto value = [boundary](EdgeClass type, BoundingBox b) {
    return [boundary, type, b](Point x, Point) {
      // Corners belong to two sides; prefer a side of the requested type.
      for (BoundarySide s : {BoundarySide::Bottom, BoundarySide::Right, BoundarySide::Top,
                             BoundarySide::Left}) {
        const auto it = boundary.find(s);
        const EdgeClass cls = it == boundary.end() ? EdgeClass::Dirichlet : it->second.type;
        if (cls != type) continue;
        const bool on = (s == BoundarySide::Bottom && std::abs(x.y - b.lo.y) <= 1e-9 * b.diameter()) ||
                        (s == BoundarySide::Top && std::abs(x.y - b.hi.y) <= 1e-9 * b.diameter()) ||
                        (s == BoundarySide::Left && std::abs(x.x - b.lo.x) <= 1e-9 * b.diameter()) ||
                        (s == BoundarySide::Right && std::abs(x.x - b.hi.x) <= 1e-9 * b.diameter());
        if (on) return it == boundary.end() ? 0.0 : it->second.value;
      }
      return 0.0;
    };
  };
  p.dirichlet = value(EdgeClass::Dirichlet, box);
  p.neumann = value(EdgeClass::Neumann, box);
  return p;
}

TwoPhaseSpec build_twophase(const RunConfig& c, const Mesh& mesh) {
  if (!c.twophase) throw ConfigError("configuration has no 'twophase' block");
  const TwoPhaseConfig& t = *c.twophase;
  TwoPhaseSpec s;
  s.pressure = build_problem(c, mesh);
  s.phi_m = t.phi_m;
  s.phi_f = t.phi_f;
  s.mu_n = t.mu_n;
  s.mu_w = t.mu_w;
  s.s_inflow = t.s_inflow;
  if (t.s_initial != 0.0) s.s_initial = [v = t.s_initial](Point, Point) { return v; };
  s.beta0 = c.beta0;
  s.beta_tilde0 = c.beta_tilde0;
  s.cfl = c.cfl;
  s.tvb_m = c.tvb_m;
  if (t.dt_max > 0.0) s.dt_max = t.dt_max;
  s.end_time = t.end_time;
  s.tvb_limiter = t.tvb_limiter;
  s.bound_limiter = t.bound_limiter;
  s.validate();
  return s;
}

std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> out;
  const Mesh mesh = build_mesh(c);
  std::ostringstream m;
  m << "mesh: " << mesh.num_cells() << " cells, " << mesh.num_edges() << " edges ("
    << mesh.count(EdgeClass::Interior) << " interior, " << mesh.count(EdgeClass::Dirichlet)
    << " dirichlet, " << mesh.count(EdgeClass::Neumann) << " neumann, "
    << mesh.count(EdgeClass::Barrier) << " barrier, " << mesh.count(EdgeClass::Fracture)
    << " fracture), h = " << mesh.h_max() << ", max aspect ratio " << mesh.max_aspect_ratio();
  out.push_back(m.str());
  std::ostringstream v;
  v << "fracture vertices: " << mesh.count(FractureVertexClass::Interior) << " interior, "
    << mesh.count(FractureVertexClass::Dirichlet) << " dirichlet, "
    << mesh.count(FractureVertexClass::Neumann) << " neumann, "
    << mesh.count(FractureVertexClass::Tip) << " tips";
  out.push_back(v.str());
  if (mesh.count(EdgeClass::Dirichlet) == 0 && !c.manufactured) {
    out.push_back("warning: no Dirichlet boundary, the pressure is determined up to a constant");
  }
  const ProblemSpec p = build_problem(c, mesh);
  p.validate();
  const std::size_t dofs = mesh.num_cells() * static_cast<std::size_t>((c.degree + 1) * (c.degree + 2) / 2);
  out.push_back("unknowns: " + std::to_string(dofs) + ", scheme " + to_string(c.scheme) + ", degree " +
                std::to_string(c.degree));
  if (c.twophase) {
    build_twophase(c, mesh);
    out.push_back("two-phase: end time " + std::to_string(c.twophase->end_time));
  }
  for (const SliceOutput& s : c.slices) {
    for (Point x : {s.request.start, s.request.end}) {
      if (!mesh.locate(x)) {
        throw ConfigError("slice '" + s.name + "' leaves the mesh");
      }
    }
    if (!s.reference.empty() && !std::filesystem::exists(s.reference)) {
      throw ConfigError("missing reference slice: " + s.reference.string());
    }
  }
  return out;
}

}  // namespace dfm
