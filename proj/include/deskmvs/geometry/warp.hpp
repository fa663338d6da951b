#pragma once

#include <span>
#include <utility>

#include <Eigen/Core>

#include "deskmvs/geometry/camera.hpp"

namespace deskmvs {

// Maps reference pixels (homogeneous) on the fronto-parallel plane z = depth of
// the reference frame to source pixels.
Eigen::Matrix3d plane_homography(const Camera& ref, const Camera& src, double depth);

// Warps src_feat[C,H,W] onto the reference grid through the plane at `depth`.
// Both cameras must already be scaled to the feature grid.
std::pair<Tensor, Tensor> homography_warp(const Tensor& src_feat, const Camera& ref, const Camera& src, double depth);

// Source-view sampling positions [D,2,H,W] for each reference pixel and each
// entry of a depth volume [D,H,W] (the plane-sweep grid).
Tensor plane_sweep_coords(const Camera& ref, const Camera& src, const Tensor& depth_volume);

// Cell positions used by the frustum encoding. xs/ys are pixel coordinates on
// a width x height grid, depths are one per slice (mm).
struct FrustumGrid {
  std::vector<double> depths;
  std::vector<double> ys;
  std::vector<double> xs;
  std::int64_t height = 0;
  std::int64_t width = 0;

  static FrustumGrid dense(std::vector<double> depths, std::int64_t height, std::int64_t width);
  std::int64_t cells() const;
};

// [3, D*H*W] with column (d*H + y)*W + x holding (u, v, z):
//   u = x/(W-1), v = y/(H-1), z = (1/d - 1/d_far) / (1/d_near - 1/d_far).
Tensor frustum_normalize(const Camera& ref, const FrustumGrid& grid);

}  // namespace deskmvs
