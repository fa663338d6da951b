#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deskmvs/numerics/tensor.hpp"

namespace deskmvs {

// Pinhole camera. R, t map world to camera coordinates (X_c = R X_w + t),
// lengths in millimetres, K in pixels.
struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double d_near = 1.0;
  double d_far = 2.0;

  // Throws ArgumentError on a non-rotation R, a malformed K or a bad range.
  void validate() const;
  // Intrinsics for a grid resampled by factor s: pixel i of the new grid sits
  // at coordinate i / s of the old one.
  Camera scaled(double s) const;
  Eigen::Vector3d center() const { return -R.transpose() * t; }
};

struct Projection {
  Eigen::Vector2d pixel;
  double depth;
};

// Throws ArgumentError when the point is not in front of the camera.
Projection project_point(const Camera& cam, const Eigen::Vector3d& x_world);
// World point at camera-frame depth `depth` on the ray through pixel (x, y).
Eigen::Vector3d backproject(const Camera& cam, double x, double y, double depth);

// Text format:
//   extrinsic
//   4 rows of [R | t] followed by 0 0 0 1
//   <blank>
//   intrinsic
//   3 rows of K
//   <blank>
//   d_near d_far
void write_camera(const std::filesystem::path& path, const Camera& cam);
Camera read_camera(const std::filesystem::path& path);

}  // namespace deskmvs
