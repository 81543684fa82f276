#pragma once

#include <functional>
#include <string>

#include "dfm/dg_basis.hpp"
#include "dfm/geometry.hpp"

namespace dfm {

/// Interior-penalty variant. σ = −1, 1, 0.
enum class Scheme { Sipg, Nipg, Iipg };

double sigma(Scheme s);
const char* to_string(Scheme s);
/// "sipg", "nipg" or "iipg"; throws ConfigError otherwise.
Scheme parse_scheme(const std::string& name);

/// Single-phase Darcy problem. Fracture and barrier properties live in Mesh::features().
struct ProblemSpec {
  /// Matrix permeability K_m at x in a cell of the given region; empty means identity.
  std::function<Tensor2(Point x, int region)> permeability;
  ScalarFn source;           // q; empty means 0
  ScalarFn fracture_source;  // q_f on γ₂; empty means 0
  ScalarFn dirichlet;        // g_D; empty means 0
  ScalarFn neumann;          // g_N = K∇p·n; empty means 0
  Scheme scheme = Scheme::Sipg;
  double alpha0 = 10.0;
  double alpha_tilde0 = 10.0;

  Tensor2 K(Point x, int region) const {
    return permeability ? permeability(x, region) : Tensor2::identity();
  }
  /// Throws ConfigError unless both penalties are positive.
  void validate() const;
};

inline double edge_penalty(double alpha0, int k, double h) { return alpha0 * k * k / h; }

}  // namespace dfm
