#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace eddyid {

using Vec2 = Eigen::Vector2d;

// Wrap a coordinate into [0, L).
inline double wrap_coord(double x, double L) {
  double y = std::fmod(x, L);
  if (y < 0) y += L;
  return y;
}

inline Vec2 wrap_point(const Vec2& x, double L) {
  return Vec2(wrap_coord(x.x(), L), wrap_coord(x.y(), L));
}

// Minimum-image difference, each component in [-L/2, L/2).
inline double min_image(double dx, double L) {
  double y = std::fmod(dx, L);
  if (y < -L / 2) y += L;
  if (y >= L / 2) y -= L;
  return y;
}

inline Vec2 min_image(const Vec2& dx, double L) {
  return Vec2(min_image(dx.x(), L), min_image(dx.y(), L));
}

inline double periodic_distance(const Vec2& a, const Vec2& b, double L) {
  return min_image(a - b, L).norm();
}

}  // namespace eddyid
