#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dfm/assembly.hpp"
#include "dfm/solver.hpp"

namespace dfm {

/// Incompressible two-phase flow without capillarity or gravity. Saturation is the wetting
/// saturation s_w.
struct TwoPhaseSpec {
  /// K_m, g_D, total-flux g_N, scheme and α₀, α̃₀. Its source members are ignored; the
  /// pressure source is q_n + q_w.
  ProblemSpec pressure;
  double phi_m = 0.2;
  double phi_f = 1.0;
  double mu_n = 1.0;
  double mu_w = 1.0;
  /// Relative permeabilities on [0,1]; empty means k_rn = 1 − s, k_rw = s.
  std::function<double(double)> krn;
  std::function<double(double)> krw;
  ScalarFn q_n, q_w, qf_n, qf_w;  // empty means 0
  double s_inflow = 1.0;          // s_{D,w} on Γ_D,in
  /// g_{N,w} on Γ_N,in; empty means the inflow fractional flow times g_N.
  ScalarFn neumann_wetting;
  ScalarFn s_initial;  // empty means 0
  double beta0 = 2.0;
  double beta_tilde0 = 2.0;
  double cfl = 0.0;  // ≤ 0 means 0.2/(2k+1)
  double tvb_m = 0.0;
  double dt_max = std::numeric_limits<double>::infinity();
  double end_time = 0.0;
  bool tvb_limiter = true;
  bool bound_limiter = true;

  double krw_at(double s) const;
  double krn_at(double s) const;
  double lambda_w(double s) const { return krw_at(s) / mu_w; }
  double lambda_n(double s) const { return krn_at(s) / mu_n; }
  double lambda_t(double s) const { return lambda_w(s) + lambda_n(s); }
  /// dλ_w/ds by central differences inside [0,1].
  double dlambda_w(double s) const;
  double cfl_number(int degree) const { return cfl > 0.0 ? cfl : 0.2 / (2 * degree + 1); }

  /// Throws ConfigError for porosities outside (0,1], non-positive viscosities or penalties,
  /// relative permeabilities leaving [0,1], or λ_t vanishing somewhere on [0,1].
  void validate() const;
};

/// Saturation right-hand side split as H_h + I_h − c_h − d_h = flux_load − flux·p + penalty_load − penalty·s.
struct SaturationOperator {
  SparseMatrix flux;             // c_h + d_h without β terms, acting on p
  Eigen::VectorXd flux_load;     // H_h + I_h without β terms
  SparseMatrix penalty;          // β and β̃ jump terms, acting on s
  Eigen::VectorXd penalty_load;  // β s_D and β̃ s_D terms
  double beta = 0.0;
  double beta_tilde = 0.0;
  Eigen::VectorXd rhs(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const {
    return flux_load - flux * p + penalty_load - penalty * s;
  }
};

struct LimiterReport {
  std::size_t cells_limited = 0;
  std::size_t cells_clamped = 0;
  double clamp_mass = 0.0;  // π_h-mass added by clamping means into [0,1]
};

struct StepReport {
  double time = 0.0;  // after the step
  double dt = 0.0;
  double mass_before = 0.0;
  double mass_after = 0.0;
  double boundary_change = 0.0;  // dt·Σ wᵢ (sources + boundary terms) over the stages
  double clamp_change = 0.0;     // stage-weighted clamp corrections
  double balance_residual = 0.0; // |Δmass − boundary_change − clamp_change| / scale
  double s_min = 0.0;
  double s_max = 0.0;
  std::size_t cells_limited = 0;
  std::size_t factorizations = 0;
};

struct TwoPhaseState {
  double time = 0.0;
  std::size_t step = 0;
  Eigen::VectorXd s;
  Eigen::VectorXd p;
};

/// y ← SSP-RK3 step of y' = f(y), with `limit` applied after every stage.
template <class Vec, class F, class L>
Vec ssp_rk3(const Vec& y0, double dt, F&& f, L&& limit) {
  Vec y1 = y0 + dt * f(y0, 0);
  limit(y1, 0);
  Vec y2 = 0.75 * y0 + 0.25 * (y1 + dt * f(y1, 1));
  limit(y2, 1);
  Vec y3 = (1.0 / 3.0) * y0 + (2.0 / 3.0) * (y2 + dt * f(y2, 2));
  limit(y3, 2);
  return y3;
}

/// IMPES driver: implicit pressure at every Runge–Kutta stage, explicit saturation.
class TwoPhaseSolver {
 public:
  TwoPhaseSolver(const DGSpace& space, TwoPhaseSpec spec, SolverConfig solver = {},
                 unsigned threads = 1);

  const DGSpace& space() const { return *space_; }
  const TwoPhaseSpec& spec() const { return spec_; }

  TwoPhaseState initial_state();

  /// ã_h + b̃_h = F̃_h + G̃_h for the saturation s. Γ_D,in is read off `inflow_pressure`
  /// (K∇p·n > 0 on edges, outward ∂p/∂ν₂ > 0 at fracture vertices); null means all outflow.
  SparseSystem pressure_system(const Eigen::VectorXd& s, const Eigen::VectorXd* inflow_pressure) const;
  /// Solves for p at saturation s; Dirichlet inflow is taken from `previous` (or found by one
  /// extra solve when null). Reuses the factorization while the matrix is unchanged, and the
  /// solution itself when λ_t is constant.
  Eigen::VectorXd solve_pressure(const Eigen::VectorXd& s, const Eigen::VectorXd* previous);
  std::size_t factorizations() const { return factorizations_; }

  SaturationOperator saturation_operator(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const;
  Eigen::VectorXd saturation_rhs(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const;

  /// Sources plus boundary terms of the saturation equation tested with ξ ≡ 1, computed
  /// directly on Γ_D, Γ_N and the Dirichlet fracture vertices.
  double boundary_balance(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const;

  /// π_h blocks per cell (n×n).
  const std::vector<Eigen::MatrixXd>& mass_blocks() const { return mass_; }
  /// π_h assembled as one global matrix, cell by cell loop over γ₂ edges.
  SparseMatrix mass_matrix() const;
  Eigen::VectorXd apply_mass_inverse(const Eigen::VectorXd& r) const;
  /// π_h(s, 1).
  double wetting_mass(const Eigen::VectorXd& s) const;
  /// π_h(s, 1) restricted to one cell, and π_h(1, 1) on it.
  double cell_mass(std::size_t cell, const Eigen::VectorXd& s) const;
  double cell_capacity(std::size_t cell) const { return capacity_[cell]; }

  double cfl_dt(const Eigen::VectorXd& p, const Eigen::VectorXd& s) const;

  LimiterReport tvb_limit(Eigen::VectorXd& s) const;
  LimiterReport bound_limit(Eigen::VectorXd& s) const;
  /// min and max of s over the bound-check points.
  std::pair<double, double> range(const Eigen::VectorXd& s) const;

  /// One SSP-RK3 step of size dt (state.p must be the pressure of state.s).
  StepReport step(TwoPhaseState& state, double dt);
  /// Steps to spec.end_time; `observer` sees every report.
  void run(TwoPhaseState& state, const std::function<void(const TwoPhaseState&, const StepReport&)>& observer = {});

 private:
  Coefficients mobility(const Eigen::VectorXd& s, const Eigen::VectorXd* p, bool wetting) const;
  bool edge_inflow(const Eigen::VectorXd& p, std::size_t edge, Point x) const;
  bool vertex_inflow(const Eigen::VectorXd& p, std::size_t record, int side) const;
  double value_at(const Eigen::VectorXd& u, std::size_t cell, Point x) const;
  Point gradient_at(const Eigen::VectorXd& u, std::size_t cell, Point x) const;
  double trace(const Eigen::VectorXd& u, std::size_t cell, const double* basis) const;
  Point gradient(const Eigen::VectorXd& u, std::size_t cell, const Point* ref_grad) const;
  void limit(Eigen::VectorXd& s, LimiterReport& rep) const;
  Eigen::VectorXd solve_system(const SparseSystem& sys);
  /// β and β̃ for the pressure p.
  std::pair<double, double> penalties(const Eigen::VectorXd& p) const;

  const DGSpace* space_;
  TwoPhaseSpec spec_;
  ProblemSpec wetting_;
  SolverConfig solver_;
  AssemblyOptions options_;
  ProblemSpec total_;
  std::vector<Eigen::MatrixXd> mass_;
  std::vector<Eigen::MatrixXd> mass_inv_;
  std::vector<double> capacity_;             // π_T(1,1)
  std::vector<Eigen::VectorXd> unit_mass_;   // π_T(φ_i, 1)
  SparseMatrix jump_edges_;                  // ⟨[[s]],[[ξ]]⟩ on ℰ⁰ ∪ ℰ^γ¹ ∪ ℰ^γ²
  SparseMatrix jump_vertices_;               // [[s]][[ξ]] over 𝒱°, both sides
  std::vector<std::array<std::size_t, 3>> neighbours_;  // across local edges; kNone on ∂Ω
  BasisTable midpoints_;                     // basis at the three reference edge midpoints
  BasisTable checks_;                        // bound-check points: cell, edge and corner points
  DirectSolver direct_;
  SparseMatrix factored_;
  bool factored_symmetric_ = false;
  std::size_t factorizations_ = 0;
  bool constant_total_ = false;     // λ_t(s) identical on [0,1]
  Eigen::VectorXd fixed_pressure_;  // the pressure when λ_t is constant
};

/// Binary checkpoint: 64-byte header (magic, version, degree, cell count, mesh hash, time,
/// step, dof count) followed by the saturation and pressure coefficients.
void write_checkpoint(std::ostream& out, const DGSpace& space, const TwoPhaseState& state);
/// Throws Error on a bad header, or when degree, cell count or mesh hash differ from `space`.
TwoPhaseState read_checkpoint(std::istream& in, const DGSpace& space);

}  // namespace dfm
