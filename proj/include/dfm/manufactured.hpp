#pragma once

#include <string>
#include <vector>

#include "dfm/mesh.hpp"
#include "dfm/problem.hpp"

namespace dfm {

/// Closed-form solutions on the unit square with one interface along x = 1/2, Dirichlet data
/// everywhere. K_m = I, aperture 1e-4.
enum class ManufacturedCase {
  Fracture,  // conductive, k_f = 1e4; p⁺ = p⁻ + sin(½)(x−½) sin y
  Barrier,   // blocking, k_b = 1e-4;  p⁺ = p⁻ + cos(½) sin y
};

struct ManufacturedSolution {
  ManufacturedCase which;
  std::vector<FractureSegmentSpec> features;
  ScalarFn exact;
  VectorFn gradient;
  ScalarFn source;
};

const char* to_string(ManufacturedCase c);
/// "fracture" or "barrier"; throws ConfigError otherwise.
ManufacturedCase parse_manufactured_case(const std::string& name);

ManufacturedSolution manufactured(ManufacturedCase c);

/// Problem with g_D = exact solution and the matching source.
ProblemSpec manufactured_problem(const ManufacturedSolution& m, Scheme scheme = Scheme::Sipg,
                                 double alpha0 = 10.0, double alpha_tilde0 = 10.0);

}  // namespace dfm
