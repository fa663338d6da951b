#include "deskmvs/geometry/warp.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/LU>

#include "deskmvs/numerics/ops.hpp"

namespace deskmvs {

namespace {

Eigen::Matrix3d checked_inverse(const Eigen::Matrix3d& k) {
  Eigen::FullPivLU<Eigen::Matrix3d> lu(k);
  if (!lu.isInvertible()) throw ArgumentError("singular intrinsics");
  return lu.inverse();
}

// Out-of-bounds marker for points behind the source camera.
constexpr double kBehind = -1e9;

}  // namespace

Eigen::Matrix3d plane_homography(const Camera& ref, const Camera& src, double depth) {
  if (!(depth > 0.0)) throw ArgumentError("plane_homography: depth must be > 0");
  const Eigen::Matrix3d r_rel = src.R * ref.R.transpose();
  const Eigen::Vector3d t_rel = src.t - r_rel * ref.t;
  const Eigen::Vector3d n(0.0, 0.0, 1.0);
  // Points on the plane satisfy n.X = depth, so X_s = (R + t n^T / depth) X_r.
  return src.K * (r_rel + t_rel * n.transpose() / depth) * checked_inverse(ref.K);
}

std::pair<Tensor, Tensor> homography_warp(const Tensor& src_feat, const Camera& ref, const Camera& src, double depth) {
  if (src_feat.rank() != 3) throw ShapeError("homography_warp: features must be [C,H,W]");
  const std::int64_t h = src_feat.dim(1), w = src_feat.dim(2);
  const Eigen::Matrix3d hm = plane_homography(ref, src, depth);
  Tensor coords({2, h, w});
  const std::int64_t np = h * w;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const Eigen::Vector3d q = hm * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
      const bool front = q.z() > 0.0;
      coords[y * w + x] = front ? q.x() / q.z() : kBehind;
      coords[np + y * w + x] = front ? q.y() / q.z() : kBehind;
    }
  }
  return bilinear_sample(src_feat, coords);
}

Tensor plane_sweep_coords(const Camera& ref, const Camera& src, const Tensor& depth_volume) {
  if (depth_volume.rank() != 3) throw ShapeError("plane_sweep_coords: depth volume must be [D,H,W]");
  const std::int64_t d = depth_volume.dim(0), h = depth_volume.dim(1), w = depth_volume.dim(2), np = h * w;
  const Eigen::Matrix3d r_rel = src.R * ref.R.transpose();
  const Eigen::Vector3d t_rel = src.t - r_rel * ref.t;
  const Eigen::Matrix3d kr_inv = checked_inverse(ref.K);
  const Eigen::Matrix3d m = src.K * r_rel * kr_inv;
  const Eigen::Vector3d kt = src.K * t_rel;
  Tensor out({d, 2, h, w});
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < d; ++k) {
    for (std::int64_t p = 0; p < np; ++p) {
      const double depth = depth_volume[k * np + p];
      const Eigen::Vector3d pix(static_cast<double>(p % w), static_cast<double>(p / w), 1.0);
      // K_s (R_rel * depth * K_r^-1 pix + t_rel), with K_r^-1 pix at unit depth.
      const Eigen::Vector3d q = depth * (m * pix) + kt;
      const bool front = q.z() > 0.0 && depth > 0.0;
      out[(k * 2) * np + p] = front ? q.x() / q.z() : kBehind;
      out[(k * 2 + 1) * np + p] = front ? q.y() / q.z() : kBehind;
    }
  }
  return out;
}

FrustumGrid FrustumGrid::dense(std::vector<double> depths, std::int64_t height, std::int64_t width) {
  FrustumGrid g;
  g.depths = std::move(depths);
  g.height = height;
  g.width = width;
  for (std::int64_t y = 0; y < height; ++y) g.ys.push_back(static_cast<double>(y));
  for (std::int64_t x = 0; x < width; ++x) g.xs.push_back(static_cast<double>(x));
  return g;
}

std::int64_t FrustumGrid::cells() const {
  return static_cast<std::int64_t>(depths.size() * ys.size() * xs.size());
}

Tensor frustum_normalize(const Camera& ref, const FrustumGrid& grid) {
  if (!(ref.d_near < ref.d_far)) throw ArgumentError("frustum_normalize: degenerate depth range");
  if (grid.height < 1 || grid.width < 1) throw ShapeError("frustum_normalize: empty pixel grid");
  const double inv_far = 1.0 / ref.d_far, inv_near = 1.0 / ref.d_near;
  const double wx = grid.width > 1 ? static_cast<double>(grid.width - 1) : 1.0;
  const double wy = grid.height > 1 ? static_cast<double>(grid.height - 1) : 1.0;
  const auto nd = static_cast<std::int64_t>(grid.depths.size());
  const auto ny = static_cast<std::int64_t>(grid.ys.size());
  const auto nx = static_cast<std::int64_t>(grid.xs.size());
  const std::int64_t n = nd * ny * nx;
  Tensor out({3, n});
  for (std::int64_t k = 0; k < nd; ++k) {
    const double d = grid.depths[k];
    // Guard against round-off just past the range ends.
    if (d < ref.d_near * (1.0 - 1e-9) || d > ref.d_far * (1.0 + 1e-9)) {
      throw ArgumentError("frustum_normalize: depth " + std::to_string(d) + " outside the scene range");
    }
    const double z = std::clamp((1.0 / d - inv_far) / (inv_near - inv_far), 0.0, 1.0);
    for (std::int64_t y = 0; y < ny; ++y) {
      const double v = std::clamp(grid.ys[y] / wy, 0.0, 1.0);
      for (std::int64_t x = 0; x < nx; ++x) {
        const std::int64_t c = (k * ny + y) * nx + x;
        out[c] = std::clamp(grid.xs[x] / wx, 0.0, 1.0);
        out[n + c] = v;
        out[2 * n + c] = z;
      }
    }
  }
  return out;
}

}  // namespace deskmvs
