#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "dfm/assembly.hpp"

namespace dfm {

enum class SolverMethod { Auto, Direct, ConjugateGradient, BiCGStab };
enum class Preconditioner { Default, None, Diagonal, ILU0 };

const char* to_string(SolverMethod m);
const char* to_string(Preconditioner p);
SolverMethod parse_solver_method(const std::string& name);
Preconditioner parse_preconditioner(const std::string& name);

struct SolverConfig {
  SolverMethod method = SolverMethod::Auto;
  double tolerance = 1e-12;  // relative residual ‖Ax−b‖/‖b‖ for the iterative methods
  int max_iterations = 20000;
  /// Default is diagonal for CG and ILU(0) for BiCGStab.
  Preconditioner preconditioner = Preconditioner::Default;
  /// Auto uses the direct path up to this many unknowns.
  std::size_t direct_limit = 200000;

  /// Throws ConfigError for a tolerance outside (0,1) or a non-positive iteration limit.
  void validate() const;
};

struct SolveReport {
  std::string method;
  int iterations = 0;
  double residual = 0.0;  // final relative residual
  std::vector<double> history;
  bool cholesky = false;  // true when a Cholesky factorization succeeded
};

struct SolveResult {
  Eigen::VectorXd x;
  SolveReport report;
};

/// Throws SolverError on breakdown, iteration limit, singular factorization, or CG on an
/// unsymmetric system.
SolveResult solve(const SparseSystem& system, const SolverConfig& config = {});

/// Reusable sparse factorization: Cholesky for symmetric systems (falling back to LU when the
/// matrix is not positive definite), LU otherwise.
class DirectSolver {
 public:
  DirectSolver();
  ~DirectSolver();
  DirectSolver(DirectSolver&&) noexcept;
  DirectSolver& operator=(DirectSolver&&) noexcept;

  void factorize(const SparseMatrix& matrix, bool symmetric);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  bool cholesky() const;
  bool factorized() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Incomplete LU with the sparsity pattern of the matrix.
class ILU0 {
 public:
  explicit ILU0(const SparseMatrix& matrix);
  Eigen::VectorXd apply(const Eigen::VectorXd& r) const;

 private:
  SparseMatrix lu_;
  std::vector<Eigen::Index> diag_;
};

/// Matrix in matrix-market coordinate format (1-based indices).
std::string to_matrix_market(const SparseMatrix& matrix);
/// Vector as a dense matrix-market array.
std::string to_matrix_market(const Eigen::VectorXd& vector);

}  // namespace dfm
