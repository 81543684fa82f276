#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dfm/config.hpp"

namespace dfm {

/// Mesh, space and problem of a configuration, kept together because the space refers to
/// the mesh.
struct Discretization {
  std::unique_ptr<Mesh> mesh;
  std::unique_ptr<DGSpace> space;
  ProblemSpec problem;
};

Discretization discretize(const RunConfig& config);

struct SliceResult {
  SliceOutput output;
  std::vector<SliceRow> rows;
  std::optional<SliceDiscrepancy> discrepancy;
};

struct SteadyResult {
  std::size_t cells = 0;
  std::size_t unknowns = 0;
  SolveReport solve;
  double asymmetry = 0.0;  // max|A − Aᵀ| / max|A|
  Eigen::VectorXd solution;
  std::vector<SliceResult> slices;
  std::vector<std::string> files;  // written, relative to the output directory
};

/// Assembles and solves; writes slice CSVs, discrepancy.csv, solution.vtk and summary.json
/// into `out_dir` (nothing is written when it is empty).
SteadyResult run_steady(const RunConfig& config, const std::filesystem::path& out_dir,
                        unsigned threads = 1);

/// One ErrorReport per configured degree; writes errors_p<k>.csv.
std::vector<ErrorReport> run_convergence(const RunConfig& config,
                                         const std::filesystem::path& out_dir,
                                         unsigned threads = 1);

struct TwoPhaseResult {
  std::size_t steps = 0;
  double time = 0.0;
  double worst_balance = 0.0;   // largest per-step residual
  double s_min = 0.0, s_max = 0.0;  // over all steps
  double clamp_total = 0.0;
  std::size_t factorizations = 0;
  std::vector<std::string> files;
};

using StepObserver = std::function<void(const TwoPhaseSolver&, const TwoPhaseState&, const StepReport&)>;

/// Runs to the end time, stopping exactly at each output time to write saturation VTK
/// snapshots; writes steps.csv, final.ckpt and summary.json.
TwoPhaseResult run_twophase(const RunConfig& config, const std::filesystem::path& out_dir,
                            unsigned threads = 1, const StepObserver& observer = {});

/// Writes matrix.mtx and rhs.mtx.
std::vector<std::string> export_matrix(const RunConfig& config, const std::filesystem::path& out_dir,
                                       unsigned threads = 1);

/// max|A − Aᵀ| / max|A|.
double relative_asymmetry(const SparseMatrix& a);

}  // namespace dfm
