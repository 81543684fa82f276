#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dfm/manufactured.hpp"
#include "dfm/mesh.hpp"
#include "dfm/postproc.hpp"
#include "dfm/problem.hpp"
#include "dfm/solver.hpp"
#include "dfm/two_phase.hpp"

namespace dfm {

inline constexpr int kConfigVersion = 1;

struct SideCondition {
  EdgeClass type = EdgeClass::Dirichlet;  // Dirichlet or Neumann
  double value = 0.0;                     // g_D, or g_N = K∇p·n
};

struct SliceOutput {
  std::string name;
  SliceRequest request;
  std::filesystem::path reference;  // empty: no comparison
};

struct ConvergenceConfig {
  ManufacturedCase which = ManufacturedCase::Fracture;
  std::vector<int> degrees;
  std::vector<std::size_t> levels;  // cells per side
  DiagonalPattern pattern = DiagonalPattern::Backward;
};

struct TwoPhaseConfig {
  double phi_m = 0.2;
  double phi_f = 1.0;
  double mu_n = 1.0;
  double mu_w = 1.0;
  double s_initial = 0.0;
  double s_inflow = 1.0;
  double end_time = 0.0;
  double dt_max = 0.0;  // ≤ 0: unbounded
  std::vector<double> output_times;
  bool tvb_limiter = true;
  bool bound_limiter = true;
};

/// A parsed run configuration. Relative asset paths are resolved against the directory of
/// the configuration file.
struct RunConfig {
  int version = kConfigVersion;
  std::string name;

  // mesh
  std::optional<StructuredGridSpec> structured;
  std::filesystem::path mesh_file;
  IntersectionRule rule = IntersectionRule::BarrierPriority;

  // features: from a CSV file, inline, or the manufactured case; optional overrides
  std::filesystem::path fracture_file;
  std::vector<FractureSegmentSpec> fractures;
  std::optional<FeatureKind> kind;
  std::optional<double> aperture;
  std::optional<double> permeability;

  // physics
  std::optional<ManufacturedCase> manufactured;
  Tensor2 matrix_permeability = Tensor2::identity();
  std::map<BoundarySide, SideCondition> boundary;
  double source = 0.0;
  double fracture_source = 0.0;

  // scheme
  int degree = 1;
  Scheme scheme = Scheme::Sipg;
  double alpha0 = 10.0;
  double alpha_tilde0 = 10.0;
  double beta0 = 2.0;
  double beta_tilde0 = 2.0;
  double tvb_m = 0.0;
  double cfl = 0.0;

  SolverConfig solver;

  std::optional<ConvergenceConfig> convergence;
  std::optional<TwoPhaseConfig> twophase;

  std::vector<SliceOutput> slices;
  bool write_vtk = true;
  bool write_tables = true;
};

/// Parses a configuration document. Unknown keys, wrong types, a missing or unsupported
/// version, and out-of-range values raise ConfigError naming the offending key.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& file);

/// Everything that does not need a solve: asset existence, mesh construction, penalty and
/// solver checks. Returns human-readable diagnostics; throws ConfigError or MeshError on the
/// first violation.
std::vector<std::string> validate(const RunConfig& config);

std::vector<FractureSegmentSpec> build_features(const RunConfig& config);
Mesh build_mesh(const RunConfig& config);
ProblemSpec build_problem(const RunConfig& config, const Mesh& mesh);
/// Linear relative permeabilities; the pressure problem is build_problem(config, mesh).
TwoPhaseSpec build_twophase(const RunConfig& config, const Mesh& mesh);

}  // namespace dfm
