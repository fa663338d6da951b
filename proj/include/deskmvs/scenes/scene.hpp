#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "deskmvs/geometry/camera.hpp"

namespace deskmvs {

enum class GeometryKind { kPlanes, kSlanted, kSteps };

GeometryKind parse_geometry(const std::string& name);
std::string geometry_name(GeometryKind kind);

struct SceneConfig {
  int views = 3;
  std::int64_t height = 64;
  std::int64_t width = 96;
  GeometryKind geometry = GeometryKind::kPlanes;
  // Focal length in pixels is focal_norm * width.
  double focal_norm = 8.0;
  // Source cameras sit at +-arc, +-2 arc, ... degrees around the scene centre.
  double arc_min_deg = 6.0;
  double arc_max_deg = 10.0;
  double d_near = 400.0;
  double d_far = 1000.0;
  // Scene centre depth range and half-depth of the content around it (mm).
  double center_min = 520.0;
  double center_max = 800.0;
  double relief = 80.0;
  // Finest texture period in mm; low_texture flattens the albedo.
  double texture_period = 3.0;
  bool low_texture = false;
  double image_noise = 0.0;
  // Forces a single fronto-parallel plane at this depth.
  std::optional<double> plane_depth;
  // Period (mm) of the fields behind render_ideal_features.
  double feature_period = 600.0;

  void validate() const;
};

// Planar patch with a local (u, v) frame; bounds may be infinite.
struct Surface {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d u_axis = Eigen::Vector3d::UnitX();
  Eigen::Vector3d v_axis = Eigen::Vector3d::UnitY();
  double u_min = -std::numeric_limits<double>::infinity();
  double u_max = std::numeric_limits<double>::infinity();
  double v_min = -std::numeric_limits<double>::infinity();
  double v_max = std::numeric_limits<double>::infinity();
  std::uint64_t texture_seed = 0;
};

struct Hit {
  double distance;
  int surface;
  Eigen::Vector3d point;
  double u, v;
};

// World coordinates coincide with the reference camera frame.
struct SceneGeometry {
  std::vector<Surface> surfaces;
  Eigen::Vector3d light = Eigen::Vector3d(-0.3, -0.4, -1.0).normalized();
  double ambient = 0.4;
  double texture_period = 3.0;
  bool low_texture = false;
  double feature_period = 600.0;

  std::optional<Hit> cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
  // Shaded RGB in [0, 1] at a hit.
  Eigen::Vector3d shade(const Hit& hit) const;
};

struct SceneSample {
  std::vector<Tensor> images;  // [3, H, W] per view
  std::vector<Camera> cameras;
  Tensor depth;       // [H, W] reference depth in mm, 0 where undefined
  Tensor depth_mask;  // [H, W]
  std::uint64_t seed = 0;
  // Absent for samples read back from disk.
  std::optional<SceneGeometry> geometry;

  int views() const { return static_cast<int>(images.size()); }
  std::int64_t height() const { return depth.dim(0); }
  std::int64_t width() const { return depth.dim(1); }
};

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg);

// Renders one view of a geometry: image [3,H,W] and depth/mask [H,W].
struct RenderedView {
  Tensor image;
  Tensor depth;
  Tensor mask;
};
RenderedView render_view(const SceneGeometry& geo, const Camera& cam, std::int64_t height, std::int64_t width);

// Per-pixel unit vectors, one per channel group, attached to surface points:
// [channels, H*s, W*s] rendered through cam.scaled(s).
Tensor render_ideal_features(const SceneGeometry& geo, const Camera& cam, std::int64_t height, std::int64_t width,
                             double scale, std::int64_t channels, std::int64_t groups);

// Throws Error describing the first violated invariant. `min_margin` is the
// inverse-depth margin required between GT depths and the range ends.
void validate_scene(const SceneSample& s, double min_margin = 0.0);

// Smooth 2D value noise in [0, 1] with unit lattice spacing.
double value_noise(std::uint64_t seed, double x, double y);

}  // namespace deskmvs
