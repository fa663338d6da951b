#pragma once

#include <cmath>

#include "deskmvs/geometry/camera.hpp"
#include "deskmvs/numerics/random.hpp"

namespace testing {

// Pinhole camera looking down +z with the principal point at the image centre.
inline deskmvs::Camera pinhole(double f, std::int64_t h, std::int64_t w, double d_near = 400.0,
                               double d_far = 1000.0) {
  deskmvs::Camera c;
  c.K << f, 0.0, 0.5 * static_cast<double>(w - 1), 0.0, f, 0.5 * static_cast<double>(h - 1), 0.0, 0.0, 1.0;
  c.d_near = d_near;
  c.d_far = d_far;
  return c;
}

// Source camera rotated by `deg` about the y axis around a point at depth `pivot`.
inline deskmvs::Camera orbit(const deskmvs::Camera& ref, double deg, double pivot) {
  deskmvs::Camera c = ref;
  const double a = deg * 3.14159265358979323846 / 180.0;
  c.R << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  const Eigen::Vector3d centre(pivot * std::sin(a), 0.0, pivot * (1.0 - std::cos(a)));
  c.t = -c.R * centre;
  return c;
}

}  // namespace testing
