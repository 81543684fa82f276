#include "dfm/manufactured.hpp"

#include <cmath>

#include "dfm/error.hpp"

namespace dfm {

const char* to_string(ManufacturedCase c) {
  return c == ManufacturedCase::Fracture ? "fracture" : "barrier";
}

ManufacturedCase parse_manufactured_case(const std::string& name) {
  if (name == "fracture") return ManufacturedCase::Fracture;
  if (name == "barrier") return ManufacturedCase::Barrier;
  throw ConfigError("unknown manufactured case '" + name + "' (expected fracture or barrier)");
}

ManufacturedSolution manufactured(ManufacturedCase c) {
  ManufacturedSolution m;
  m.which = c;
  const double s = std::sin(0.5);
  const double co = std::cos(0.5);
  auto plus = [](Point inside) { return inside.x > 0.5; };
  if (c == ManufacturedCase::Fracture) {
    m.features = {{{0.5, 0.0}, {0.5, 1.0}, FeatureKind::Conductive, 1e-4, 1e4}};
    m.exact = [=](Point x, Point in) {
      double v = std::sin(x.x) * std::sin(x.y);
      if (plus(in)) v += s * (x.x - 0.5) * std::sin(x.y);
      return v;
    };
    m.gradient = [=](Point x, Point in) {
      Point g{std::cos(x.x) * std::sin(x.y), std::sin(x.x) * std::cos(x.y)};
      if (plus(in)) g = g + Point{s * std::sin(x.y), s * (x.x - 0.5) * std::cos(x.y)};
      return g;
    };
    m.source = [=](Point x, Point in) {
      double v = 2.0 * std::sin(x.x) * std::sin(x.y);
      if (plus(in)) v += s * (x.x - 0.5) * std::sin(x.y);
      return v;
    };
  } else {
    m.features = {{{0.5, 0.0}, {0.5, 1.0}, FeatureKind::Blocking, 1e-4, 1e-4}};
    m.exact = [=](Point x, Point in) {
      double v = std::sin(x.x) * std::sin(x.y);
      if (plus(in)) v += co * std::sin(x.y);
      return v;
    };
    m.gradient = [=](Point x, Point in) {
      Point g{std::cos(x.x) * std::sin(x.y), std::sin(x.x) * std::cos(x.y)};
      if (plus(in)) g = g + Point{0.0, co * std::cos(x.y)};
      return g;
    };
    m.source = [=](Point x, Point in) {
      double v = 2.0 * std::sin(x.x) * std::sin(x.y);
      if (plus(in)) v += co * std::sin(x.y);
      return v;
    };
  }
  return m;
}

ProblemSpec manufactured_problem(const ManufacturedSolution& m, Scheme scheme, double alpha0,
                                 double alpha_tilde0) {
  ProblemSpec spec;
  spec.source = m.source;
  spec.dirichlet = m.exact;
  spec.scheme = scheme;
  spec.alpha0 = alpha0;
  spec.alpha_tilde0 = alpha_tilde0;
  return spec;
}

}  // namespace dfm
