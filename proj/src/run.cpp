#include "dfm/run.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dfm/assembly.hpp"
#include "dfm/error.hpp"
#include "json.hpp"

namespace dfm {

namespace {

using json = nlohmann::json;

void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& text,
                std::vector<std::string>& files) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw Error("cannot write " + (dir / name).string());
  out << text;
  if (!out) throw Error("failed writing " + (dir / name).string());
  files.push_back(name);
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("missing reference slice: " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double relative_asymmetry(const SparseMatrix& a) {
  const SparseMatrix at = a.transpose();
  const double scale = a.coeffs().cwiseAbs().maxCoeff();
  const SparseMatrix d = a - at;
  const double diff = d.nonZeros() ? d.coeffs().cwiseAbs().maxCoeff() : 0.0;
  return scale > 0.0 ? diff / scale : diff;
}

Discretization discretize(const RunConfig& config) {
  Discretization d;
  d.mesh = std::make_unique<Mesh>(build_mesh(config));
  d.space = std::make_unique<DGSpace>(*d.mesh, config.degree);
  d.problem = build_problem(config, *d.mesh);
  return d;
}

SteadyResult run_steady(const RunConfig& config, const std::filesystem::path& out_dir,
                        unsigned threads) {
  const Discretization d = discretize(config);
  AssemblyOptions ao;
  ao.threads = threads;
  const SparseSystem sys = assemble(*d.space, d.problem, {}, ao);
  SteadyResult r;
  r.cells = d.mesh->num_cells();
  r.unknowns = d.space->n_dofs();
  r.asymmetry = relative_asymmetry(sys.matrix);
  SolveResult sol = solve(sys, config.solver);
  r.solve = sol.report;
  r.solution = std::move(sol.x);
  const DGField field(*d.space, r.solution);

  std::string report = "slice,samples,max_abs,rms,max_rel,worst_s\n";
  bool any_reference = false;
  for (const SliceOutput& s : config.slices) {
    SliceResult sr;
    sr.output = s;
    sr.rows = extract_slice(field, s.request);
    if (!s.reference.empty()) {
      sr.discrepancy = compare_slices(sr.rows, parse_slice_csv(read_text(s.reference)));
      const SliceDiscrepancy& q = *sr.discrepancy;
      report += s.name + "," + std::to_string(q.samples) + "," + num(q.max_abs) + "," + num(q.rms) +
                "," + num(q.max_rel) + "," + num(q.worst_s) + "\n";
      any_reference = true;
    }
    if (!out_dir.empty()) write_file(out_dir, "slice_" + s.name + ".csv", slice_csv(sr.rows), r.files);
    r.slices.push_back(std::move(sr));
  }
  if (out_dir.empty()) return r;
  if (any_reference) write_file(out_dir, "discrepancy.csv", report, r.files);
  if (config.write_vtk) {
    std::ostringstream vtk;
    write_vtk(vtk, *d.mesh, {{"pressure", &field}}, config.name.empty() ? "dfm" : config.name);
    write_file(out_dir, "solution.vtk", vtk.str(), r.files);
  }
  json summary = {{"name", config.name},
                  {"cells", r.cells},
                  {"unknowns", r.unknowns},
                  {"degree", config.degree},
                  {"scheme", to_string(config.scheme)},
                  {"solver", r.solve.method},
                  {"iterations", r.solve.iterations},
                  {"residual", r.solve.residual},
                  {"cholesky", r.solve.cholesky},
                  {"asymmetry", r.asymmetry}};
  write_file(out_dir, "summary.json", summary.dump(2) + "\n", r.files);
  return r;
}

std::vector<ErrorReport> run_convergence(const RunConfig& config,
                                         const std::filesystem::path& out_dir, unsigned threads) {
  if (!config.convergence) throw ConfigError("configuration has no 'convergence' block");
  const ConvergenceConfig& cc = *config.convergence;
  ConvergenceOptions o;
  o.scheme = config.scheme;
  o.alpha0 = config.alpha0;
  o.alpha_tilde0 = config.alpha_tilde0;
  o.pattern = cc.pattern;
  o.solver = config.solver;
  o.threads = threads;
  std::vector<ErrorReport> out;
  std::vector<std::string> files;
  for (int k : cc.degrees) {
    out.push_back(convergence_table(cc.which, k, cc.levels, o));
    if (!out_dir.empty() && config.write_tables) {
      write_file(out_dir, "errors_p" + std::to_string(k) + ".csv", out.back().csv(), files);
    }
  }
  return out;
}

TwoPhaseResult run_twophase(const RunConfig& config, const std::filesystem::path& out_dir,
                            unsigned threads, const StepObserver& observer) {
  const Mesh mesh = build_mesh(config);
  const DGSpace space(mesh, config.degree);
  TwoPhaseSolver solver(space, build_twophase(config, mesh), config.solver, threads);
  const double end = config.twophase->end_time;
  std::vector<double> outputs = config.twophase->output_times;
  if (outputs.empty() || outputs.back() < end) outputs.push_back(end);

  TwoPhaseResult r;
  TwoPhaseState state = solver.initial_state();
  auto range = solver.range(state.s);
  r.s_min = range.first;
  r.s_max = range.second;
  std::string steps = "step,time,dt,mass,boundary_change,clamp_change,balance_residual,s_min,s_max,cells_limited\n";
  json snapshots = json::array();

  auto snapshot = [&](std::size_t index) {
    if (out_dir.empty() || !config.write_vtk) return;
    const DGField s(space, state.s), p(space, state.p);
    std::ostringstream vtk;
    write_vtk(vtk, mesh, {{"saturation", &s}, {"pressure", &p}},
              (config.name.empty() ? std::string("dfm") : config.name) + " t=" + num(state.time));
    const std::string name = "saturation_" + std::to_string(index) + ".vtk";
    write_file(out_dir, name, vtk.str(), r.files);
    snapshots.push_back({{"file", name}, {"time", state.time}});
  };

  std::size_t next = 0;
  while (next < outputs.size()) {
    const double target = outputs[next];
    double dt = solver.cfl_dt(state.p, state.s);
    if (!std::isfinite(dt)) dt = target - state.time;
    dt = std::min(dt, target - state.time);
    const StepReport rep = solver.step(state, dt);
    if (!state.s.allFinite()) {
      throw Error("saturation became non-finite at t = " + num(state.time));
    }
    if (std::abs(state.time - target) <= 1e-12 * end) state.time = target;
    ++r.steps;
    r.worst_balance = std::max(r.worst_balance, rep.balance_residual);
    r.s_min = std::min(r.s_min, rep.s_min);
    r.s_max = std::max(r.s_max, rep.s_max);
    r.clamp_total += std::abs(rep.clamp_change);
    steps += std::to_string(state.step) + "," + num(state.time) + "," + num(rep.dt) + "," +
             num(rep.mass_after) + "," + num(rep.boundary_change) + "," + num(rep.clamp_change) +
             "," + num(rep.balance_residual) + "," + num(rep.s_min) + "," + num(rep.s_max) + "," +
             std::to_string(rep.cells_limited) + "\n";
    if (observer) observer(solver, state, rep);
    if (state.time >= target) snapshot(next++);
  }
  r.time = state.time;
  r.factorizations = solver.factorizations();
  if (out_dir.empty()) return r;
  if (config.write_tables) write_file(out_dir, "steps.csv", steps, r.files);
  {
    std::ostringstream ck;
    write_checkpoint(ck, space, state);
    write_file(out_dir, "final.ckpt", ck.str(), r.files);
  }
  json summary = {{"name", config.name},
                  {"cells", mesh.num_cells()},
                  {"steps", r.steps},
                  {"time", r.time},
                  {"worst_balance_residual", r.worst_balance},
                  {"s_min", r.s_min},
                  {"s_max", r.s_max},
                  {"clamp_total", r.clamp_total},
                  {"factorizations", r.factorizations},
                  {"snapshots", snapshots}};
  write_file(out_dir, "summary.json", summary.dump(2) + "\n", r.files);
  return r;
}

std::vector<std::string> export_matrix(const RunConfig& config, const std::filesystem::path& out_dir,
                                       unsigned threads) {
  const Discretization d = discretize(config);
  AssemblyOptions ao;
  ao.threads = threads;
  const SparseSystem sys = assemble(*d.space, d.problem, {}, ao);
  std::vector<std::string> files;
  write_file(out_dir, "matrix.mtx", to_matrix_market(sys.matrix), files);
  write_file(out_dir, "rhs.mtx", to_matrix_market(sys.rhs), files);
  return files;
}

}  // namespace dfm
