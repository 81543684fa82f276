#include "dfm/solver.hpp"

#include <Eigen/CholmodSupport>
#include <Eigen/UmfPackSupport>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dfm/error.hpp"

namespace dfm {

const char* to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::Auto: return "auto";
    case SolverMethod::Direct: return "direct";
    case SolverMethod::ConjugateGradient: return "cg";
    case SolverMethod::BiCGStab: return "bicgstab";
  }
  return "auto";
}

const char* to_string(Preconditioner p) {
  switch (p) {
    case Preconditioner::Default: return "default";
    case Preconditioner::None: return "none";
    case Preconditioner::Diagonal: return "diagonal";
    case Preconditioner::ILU0: return "ilu0";
  }
  return "default";
}

SolverMethod parse_solver_method(const std::string& name) {
  for (auto m : {SolverMethod::Auto, SolverMethod::Direct, SolverMethod::ConjugateGradient,
                 SolverMethod::BiCGStab}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown solver method '" + name + "'");
}

Preconditioner parse_preconditioner(const std::string& name) {
  for (auto p : {Preconditioner::Default, Preconditioner::None, Preconditioner::Diagonal,
                 Preconditioner::ILU0}) {
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown preconditioner '" + name + "'");
}

void SolverConfig::validate() const {
  if (!(tolerance > 0.0 && tolerance < 1.0)) throw ConfigError("solver tolerance must lie in (0,1)");
  if (max_iterations <= 0) throw ConfigError("solver max_iterations must be positive");
}

// ---------------------------------------------------------------------------------------------

struct DirectSolver::Impl {
  using ColMatrix = Eigen::SparseMatrix<double>;
  std::unique_ptr<Eigen::CholmodDecomposition<ColMatrix, Eigen::Lower>> llt;
  std::unique_ptr<Eigen::UmfPackLU<ColMatrix>> lu;
  ColMatrix copy;
};

DirectSolver::DirectSolver() : impl_(std::make_unique<Impl>()) {}
DirectSolver::~DirectSolver() = default;
DirectSolver::DirectSolver(DirectSolver&&) noexcept = default;
DirectSolver& DirectSolver::operator=(DirectSolver&&) noexcept = default;

void DirectSolver::factorize(const SparseMatrix& matrix, bool symmetric) {
  impl_->llt.reset();
  impl_->lu.reset();
  impl_->copy = matrix;
  impl_->copy.makeCompressed();
  if (symmetric) {
    auto llt = std::make_unique<Eigen::CholmodDecomposition<Impl::ColMatrix, Eigen::Lower>>();
    llt->setMode(Eigen::CholmodSupernodalLLt);
    llt->cholmod().print = 0;  // an indefinite matrix is expected here, LU takes over
    llt->compute(impl_->copy);
    if (llt->info() == Eigen::Success) {
      impl_->llt = std::move(llt);
      return;
    }
  }
  auto lu = std::make_unique<Eigen::UmfPackLU<Impl::ColMatrix>>();
  lu->compute(impl_->copy);
  if (lu->info() != Eigen::Success) throw SolverError("sparse LU factorization failed (singular matrix?)");
  impl_->lu = std::move(lu);
}

Eigen::VectorXd DirectSolver::solve(const Eigen::VectorXd& rhs) const {
  if (impl_->llt) return impl_->llt->solve(rhs);
  if (impl_->lu) return impl_->lu->solve(rhs);
  throw SolverError("solve called before factorize");
}

bool DirectSolver::cholesky() const { return impl_->llt != nullptr; }
bool DirectSolver::factorized() const { return impl_->llt || impl_->lu; }

// ---------------------------------------------------------------------------------------------

ILU0::ILU0(const SparseMatrix& matrix) : lu_(matrix) {
  lu_.makeCompressed();
  const Eigen::Index n = lu_.rows();
  diag_.assign(static_cast<std::size_t>(n), -1);
  const int* outer = lu_.outerIndexPtr();
  const int* inner = lu_.innerIndexPtr();
  double* val = lu_.valuePtr();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int p = outer[i]; p < outer[i + 1]; ++p) {
      if (inner[p] == i) diag_[i] = p;
    }
    if (diag_[i] < 0) throw SolverError("ILU(0): missing diagonal entry in row " + std::to_string(i));
  }
  std::vector<int> pos(static_cast<std::size_t>(n), -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int p = outer[i]; p < outer[i + 1]; ++p) pos[inner[p]] = p;
    for (int p = outer[i]; p < outer[i + 1] && inner[p] < i; ++p) {
      const int k = inner[p];
      const double dk = val[diag_[k]];
      if (dk == 0.0) throw SolverError("ILU(0): zero pivot in row " + std::to_string(k));
      val[p] /= dk;
      for (int q = static_cast<int>(diag_[k]) + 1; q < outer[k + 1]; ++q) {
        const int j = inner[q];
        if (pos[j] >= 0) val[pos[j]] -= val[p] * val[q];
      }
    }
    for (int p = outer[i]; p < outer[i + 1]; ++p) pos[inner[p]] = -1;
  }
}

Eigen::VectorXd ILU0::apply(const Eigen::VectorXd& r) const {
  const Eigen::Index n = lu_.rows();
  const int* outer = lu_.outerIndexPtr();
  const int* inner = lu_.innerIndexPtr();
  const double* val = lu_.valuePtr();
  Eigen::VectorXd y = r;
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = y[i];
    for (int p = outer[i]; p < diag_[i]; ++p) s -= val[p] * y[inner[p]];
    y[i] = s;
  }
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int p = static_cast<int>(diag_[i]) + 1; p < outer[i + 1]; ++p) s -= val[p] * y[inner[p]];
    y[i] = s / val[diag_[i]];
  }
  return y;
}

// ---------------------------------------------------------------------------------------------

namespace {

struct Precond {
  Preconditioner kind = Preconditioner::None;
  Eigen::VectorXd inv_diag;
  std::unique_ptr<ILU0> ilu;

  Precond(const SparseMatrix& a, Preconditioner k) : kind(k) {
    if (kind == Preconditioner::Diagonal) {
      inv_diag = a.diagonal();
      for (Eigen::Index i = 0; i < inv_diag.size(); ++i) {
        if (inv_diag[i] == 0.0) throw SolverError("diagonal preconditioner: zero diagonal entry");
        inv_diag[i] = 1.0 / inv_diag[i];
      }
    } else if (kind == Preconditioner::ILU0) {
      ilu = std::make_unique<ILU0>(a);
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const {
    switch (kind) {
      case Preconditioner::Diagonal: return inv_diag.cwiseProduct(r);
      case Preconditioner::ILU0: return ilu->apply(r);
      default: return r;
    }
  }
};

std::string failure(const std::string& what, const SolveReport& rep) {
  std::ostringstream msg;
  msg << what << " after " << rep.iterations << " iterations; residual history:";
  const std::size_t n = rep.history.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (n > 12 && i == 6) {
      msg << " ...";
      i = n - 6;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, " %.3e", rep.history[i]);
    msg << buf;
  }
  return msg.str();
}

SolveResult pcg(const SparseSystem& sys, const SolverConfig& cfg, const Precond& m) {
  SolveResult res;
  res.report.method = std::string("cg+") + to_string(m.kind);
  const Eigen::VectorXd& b = sys.rhs;
  res.x = Eigen::VectorXd::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) return res;
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = m.apply(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  res.report.history.push_back(1.0);
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const Eigen::VectorXd ap = sys.matrix * p;
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      res.report.iterations = it;
      throw SolverError(failure("CG breakdown (matrix not positive definite)", res.report));
    }
    const double a = rz / pap;
    res.x += a * p;
    r -= a * ap;
    const double rel = r.norm() / bnorm;
    res.report.history.push_back(rel);
    res.report.iterations = it;
    res.report.residual = rel;
    if (rel <= cfg.tolerance) return res;
    z = m.apply(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw SolverError(failure("CG reached the iteration limit", res.report));
}

SolveResult bicgstab(const SparseSystem& sys, const SolverConfig& cfg, const Precond& m) {
  SolveResult res;
  res.report.method = std::string("bicgstab+") + to_string(m.kind);
  const Eigen::VectorXd& b = sys.rhs;
  res.x = Eigen::VectorXd::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) return res;
  Eigen::VectorXd r = b;
  const Eigen::VectorXd r0 = r;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd v = p;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  res.report.history.push_back(1.0);
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    res.report.iterations = it;
    const double rho_new = r0.dot(r);
    if (rho_new == 0.0 || omega == 0.0) throw SolverError(failure("BiCGStab breakdown", res.report));
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    p = r + beta * (p - omega * v);
    const Eigen::VectorXd ph = m.apply(p);
    v = sys.matrix * ph;
    const double r0v = r0.dot(v);
    if (r0v == 0.0) throw SolverError(failure("BiCGStab breakdown", res.report));
    alpha = rho / r0v;
    const Eigen::VectorXd s = r - alpha * v;
    if (s.norm() / bnorm <= cfg.tolerance) {
      res.x += alpha * ph;
      res.report.residual = (b - sys.matrix * res.x).norm() / bnorm;
      res.report.history.push_back(res.report.residual);
      if (res.report.residual <= cfg.tolerance) return res;
      r = b - sys.matrix * res.x;
      continue;
    }
    const Eigen::VectorXd sh = m.apply(s);
    const Eigen::VectorXd t = sys.matrix * sh;
    const double tt = t.dot(t);
    omega = tt > 0.0 ? t.dot(s) / tt : 0.0;
    res.x += alpha * ph + omega * sh;
    r = s - omega * t;
    const double rel = r.norm() / bnorm;
    res.report.history.push_back(rel);
    res.report.residual = rel;
    if (rel <= cfg.tolerance) {
      // guard against drift of the recursive residual
      const double true_rel = (b - sys.matrix * res.x).norm() / bnorm;
      res.report.residual = true_rel;
      if (true_rel <= cfg.tolerance) return res;
      r = b - sys.matrix * res.x;
    }
  }
  throw SolverError(failure("BiCGStab reached the iteration limit", res.report));
}

}  // namespace

SolveResult solve(const SparseSystem& system, const SolverConfig& config) {
  config.validate();
  if (system.matrix.rows() != system.matrix.cols() || system.matrix.rows() != system.rhs.size()) {
    throw SolverError("system dimensions do not match");
  }
  SolverMethod method = config.method;
  if (method == SolverMethod::Auto) {
    if (static_cast<std::size_t>(system.rhs.size()) <= config.direct_limit) {
      method = SolverMethod::Direct;
    } else {
      method = system.symmetric ? SolverMethod::ConjugateGradient : SolverMethod::BiCGStab;
    }
  }
  if (method == SolverMethod::Direct) {
    DirectSolver direct;
    direct.factorize(system.matrix, system.symmetric);
    SolveResult res;
    res.x = direct.solve(system.rhs);
    res.report.method = direct.cholesky() ? "cholesky" : "lu";
    res.report.cholesky = direct.cholesky();
    const double bnorm = system.rhs.norm();
    res.report.residual =
        bnorm > 0.0 ? (system.matrix * res.x - system.rhs).norm() / bnorm : res.x.norm();
    res.report.history.push_back(res.report.residual);
    if (!res.x.allFinite()) throw SolverError("direct solve produced non-finite values");
    return res;
  }
  if (method == SolverMethod::ConjugateGradient) {
    if (!system.symmetric) throw SolverError("conjugate gradient requires a symmetric (SIPG) system");
    const Preconditioner p =
        config.preconditioner == Preconditioner::Default ? Preconditioner::Diagonal : config.preconditioner;
    return pcg(system, config, Precond(system.matrix, p));
  }
  const Preconditioner p =
      config.preconditioner == Preconditioner::Default ? Preconditioner::ILU0 : config.preconditioner;
  return bicgstab(system, config, Precond(system.matrix, p));
}

std::string to_matrix_market(const SparseMatrix& matrix) {
  std::ostringstream out;
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << matrix.rows() << " " << matrix.cols() << " " << matrix.nonZeros() << "\n";
  char buf[96];
  for (Eigen::Index i = 0; i < matrix.outerSize(); ++i) {
    for (SparseMatrix::InnerIterator it(matrix, i); it; ++it) {
      std::snprintf(buf, sizeof buf, "%lld %lld %.17g\n", static_cast<long long>(it.row() + 1),
                    static_cast<long long>(it.col() + 1), it.value());
      out << buf;
    }
  }
  return out.str();
}

std::string to_matrix_market(const Eigen::VectorXd& vector) {
  std::ostringstream out;
  out << "%%MatrixMarket matrix array real general\n" << vector.size() << " 1\n";
  char buf[40];
  for (Eigen::Index i = 0; i < vector.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g\n", vector[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace dfm
