#pragma once

#include <array>
#include <cmath>

namespace dfm {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline Point operator*(Point a, double s) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline Point normalized(Point a) { return a * (1.0 / norm(a)); }
/// Counter-clockwise rotation by 90 degrees.
inline Point rot90(Point a) { return {-a.y, a.x}; }

/// Symmetric 2x2 tensor stored row-major.
struct Tensor2 {
  double xx = 1.0, xy = 0.0, yx = 0.0, yy = 1.0;

  static Tensor2 identity(double s = 1.0) { return {s, 0.0, 0.0, s}; }
  Point apply(Point v) const { return {xx * v.x + xy * v.y, yx * v.x + yy * v.y}; }
  bool is_spd() const {
    return std::abs(xy - yx) <= 1e-12 * (std::abs(xx) + std::abs(yy)) && xx > 0.0 &&
           xx * yy - xy * yx > 0.0;
  }
};

inline Tensor2 operator*(double s, const Tensor2& t) {
  return {s * t.xx, s * t.xy, s * t.yx, s * t.yy};
}

/// Distance from p to the closed segment [a, b].
inline double distance_to_segment(Point p, Point a, Point b) {
  const Point d = b - a;
  const double len2 = dot(d, d);
  double t = len2 > 0.0 ? dot(p - a, d) / len2 : 0.0;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  return norm(p - (a + t * d));
}

}  // namespace dfm
