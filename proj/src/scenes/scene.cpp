#include "deskmvs/scenes/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "deskmvs/numerics/random.hpp"

namespace deskmvs {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ULL ^
                                         static_cast<std::uint64_t>(iy) * 0x85157AF5ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double unit_hash(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

constexpr double kPi = std::numbers::pi;
constexpr double kTextureContrast = 2.5;
constexpr double kDeg = kPi / 180.0;

Surface fronto_plane(double z, std::uint64_t seed) {
  Surface s;
  s.origin = Eigen::Vector3d(0.0, 0.0, z);
  s.normal = Eigen::Vector3d(0.0, 0.0, -1.0);
  s.texture_seed = seed;
  return s;
}

Camera arc_camera(double angle, double pivot, const Eigen::Matrix3d& k, const SceneConfig& cfg) {
  const Eigen::Vector3d centre(-pivot * std::sin(angle), 0.0, pivot - pivot * std::cos(angle));
  Camera cam;
  cam.K = k;
  cam.R = Eigen::AngleAxisd(-angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
  cam.t = -cam.R * centre;
  cam.d_near = cfg.d_near;
  cam.d_far = cfg.d_far;
  return cam;
}

// Unit ray direction (world) through pixel (x, y).
Eigen::Vector3d pixel_ray(const Camera& cam, const Eigen::Matrix3d& k_inv, double x, double y) {
  return (cam.R.transpose() * (k_inv * Eigen::Vector3d(x, y, 1.0))).normalized();
}

}  // namespace

GeometryKind parse_geometry(const std::string& name) {
  if (name == "planes") return GeometryKind::kPlanes;
  if (name == "slanted") return GeometryKind::kSlanted;
  if (name == "steps") return GeometryKind::kSteps;
  throw ConfigError("unknown scene geometry '" + name + "' (planes|slanted|steps)");
}

std::string geometry_name(GeometryKind kind) {
  switch (kind) {
    case GeometryKind::kPlanes:
      return "planes";
    case GeometryKind::kSlanted:
      return "slanted";
    case GeometryKind::kSteps:
      return "steps";
  }
  return "?";
}

void SceneConfig::validate() const {
  if (views < 2) throw ConfigError("scene: need at least 2 views");
  if (height < 1 || width < 1) throw ConfigError("scene: empty image");
  if (!(focal_norm > 0.0)) throw ConfigError("scene: focal_norm must be > 0");
  if (!(arc_min_deg > 0.0 && arc_min_deg <= arc_max_deg && arc_max_deg < 80.0)) {
    throw ConfigError("scene: camera arc must satisfy 0 < arc_min <= arc_max < 80 degrees (zero baseline otherwise)");
  }
  if (!(0.0 < d_near && d_near < d_far)) throw ConfigError("scene: need 0 < d_near < d_far");
  if (!(center_min <= center_max && relief >= 0.0)) throw ConfigError("scene: bad centre range or relief");
  if (center_min - relief < d_near || center_max + relief > d_far) {
    throw ConfigError("scene: content range leaves [d_near, d_far]");
  }
  if (plane_depth && !(*plane_depth > d_near && *plane_depth < d_far)) {
    throw ConfigError("scene: plane depth outside the depth range");
  }
  if (!(texture_period > 0.0 && feature_period > 0.0)) throw ConfigError("scene: periods must be > 0");
  if (image_noise < 0.0) throw ConfigError("scene: negative image noise");
}

double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = quintic(x - fx), ty = quintic(y - fy);
  const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
  const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
  return (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty;
}

std::optional<Hit> SceneGeometry::cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
  std::optional<Hit> best;
  for (int i = 0; i < static_cast<int>(surfaces.size()); ++i) {
    const Surface& s = surfaces[static_cast<std::size_t>(i)];
    const double denom = s.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double t = s.normal.dot(s.origin - origin) / denom;
    if (!(t > 1e-9) || (best && t >= best->distance)) continue;
    const Eigen::Vector3d p = origin + t * dir;
    const double u = (p - s.origin).dot(s.u_axis), v = (p - s.origin).dot(s.v_axis);
    if (u < s.u_min || u > s.u_max || v < s.v_min || v > s.v_max) continue;
    best = Hit{t, i, p, u, v};
  }
  return best;
}

Eigen::Vector3d SceneGeometry::shade(const Hit& hit) const {
  const Surface& s = surfaces[static_cast<std::size_t>(hit.surface)];
  Eigen::Vector3d rgb;
  for (int c = 0; c < 3; ++c) {
    const std::uint64_t seed = mix(s.texture_seed + 17 * static_cast<std::uint64_t>(c));
    double acc = 0.0, norm = 0.0, amp = 1.0, period = 8.0 * texture_period;
    for (int o = 0; o < 4; ++o) {
      acc += amp * value_noise(seed + static_cast<std::uint64_t>(o), hit.u / period, hit.v / period);
      norm += amp;
      amp *= 0.6;
      period *= 0.5;
    }
    // Averaging octaves pulls the noise towards 0.5; stretch it back out.
    const double n = std::clamp(0.5 + kTextureContrast * (acc / norm - 0.5), 0.0, 1.0);
    rgb[c] = low_texture ? 0.5 + 0.02 * (n - 0.5) : 0.1 + 0.8 * n;
  }
  Eigen::Vector3d normal = s.normal;
  if (normal.z() > 0.0) normal = -normal;
  const double lambert = std::max(0.0, normal.dot(light));
  return rgb * (ambient + (1.0 - ambient) * lambert);
}

RenderedView render_view(const SceneGeometry& geo, const Camera& cam, std::int64_t height, std::int64_t width) {
  RenderedView out{Tensor({3, height, width}), Tensor({height, width}), Tensor({height, width})};
  const Eigen::Matrix3d k_inv = cam.K.inverse();
  const Eigen::Vector3d origin = cam.center();
  const std::int64_t np = height * width;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < np; ++p) {
    const auto x = static_cast<double>(p % width), y = static_cast<double>(p / width);
    const auto hit = geo.cast(origin, pixel_ray(cam, k_inv, x, y));
    if (!hit) continue;
    const Eigen::Vector3d rgb = geo.shade(*hit);
    for (int c = 0; c < 3; ++c) out.image[c * np + p] = rgb[c];
    out.depth[p] = (cam.R * hit->point + cam.t).z();
    out.mask[p] = 1.0;
  }
  return out;
}

Tensor render_ideal_features(const SceneGeometry& geo, const Camera& cam, std::int64_t height, std::int64_t width,
                             double scale, std::int64_t channels, std::int64_t groups) {
  if (groups < 1 || channels % groups != 0) throw ArgumentError("ideal features: groups must divide channels");
  const Camera c = cam.scaled(scale);
  const auto h = static_cast<std::int64_t>(std::llround(static_cast<double>(height) * scale));
  const auto w = static_cast<std::int64_t>(std::llround(static_cast<double>(width) * scale));
  const std::int64_t cpg = channels / groups, np = h * w;
  if (cpg % 2 != 0) throw ArgumentError("ideal features: channels per group must be even");
  Tensor out({channels, h, w});
  const Eigen::Matrix3d k_inv = c.K.inverse();
  const Eigen::Vector3d origin = c.center();
  const std::int64_t pairs = cpg / 2;
  const double amp = 1.0 / std::sqrt(static_cast<double>(pairs));
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < np; ++p) {
    const auto hit = geo.cast(origin, pixel_ray(c, k_inv, static_cast<double>(p % w), static_cast<double>(p / w)));
    if (!hit) continue;
    const Surface& s = geo.surfaces[static_cast<std::size_t>(hit->surface)];
    // (cos, sin) pairs of a planar wave in surface coordinates: the dot product
    // of two group vectors is the mean of cos(omega . delta), which depends on
    // the surface displacement alone and falls off monotonically while
    // |omega . delta| < pi.
    for (std::int64_t j = 0; j < groups * pairs; ++j) {
      const std::uint64_t seed = mix(s.texture_seed ^ mix(static_cast<std::uint64_t>(1000 + j)));
      const double mag = 2.0 * kPi / geo.feature_period * (0.5 + 0.5 * unit_hash(seed));
      const double dir = 2.0 * kPi * unit_hash(mix(seed));
      const double phase = 2.0 * kPi * unit_hash(mix(seed + 1)) +
                           mag * (std::cos(dir) * hit->u + std::sin(dir) * hit->v);
      out[(2 * j) * np + p] = amp * std::cos(phase);
      out[(2 * j + 1) * np + p] = amp * std::sin(phase);
    }
  }
  return out;
}

SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(mix(seed));
  const double pivot = cfg.plane_depth ? *cfg.plane_depth : rng.uniform(cfg.center_min, cfg.center_max);
  const double arc = rng.uniform(cfg.arc_min_deg, cfg.arc_max_deg) * kDeg;
  // Half extent of the reference footprint at the pivot depth (mm).
  const double half_w = pivot * 0.5 / cfg.focal_norm;
  const double half_h = half_w * static_cast<double>(cfg.height) / static_cast<double>(cfg.width);

  SceneGeometry geo;
  geo.texture_period = cfg.texture_period;
  geo.low_texture = cfg.low_texture;
  geo.feature_period = cfg.feature_period;
  auto next_seed = [&] { return rng.next_u64(); };
  if (cfg.plane_depth) {
    geo.surfaces.push_back(fronto_plane(*cfg.plane_depth, next_seed()));
  } else if (cfg.geometry == GeometryKind::kPlanes) {
    geo.surfaces.push_back(fronto_plane(pivot + cfg.relief * rng.uniform(0.3, 1.0), next_seed()));
    const int patches = 1 + static_cast<int>(rng.index(2));
    for (int i = 0; i < patches; ++i) {
      Surface s = fronto_plane(pivot - cfg.relief * rng.uniform(0.0, 1.0), next_seed());
      s.origin.x() = rng.uniform(-0.5, 0.5) * half_w;
      s.origin.y() = rng.uniform(-0.5, 0.5) * half_h;
      const double hu = rng.uniform(0.3, 0.7) * half_w, hv = rng.uniform(0.3, 0.7) * half_h;
      s.u_min = -hu;
      s.u_max = hu;
      s.v_min = -hv;
      s.v_max = hv;
      geo.surfaces.push_back(s);
    }
  } else if (cfg.geometry == GeometryKind::kSlanted) {
    Surface s = fronto_plane(pivot + rng.uniform(-1.0, 1.0) * cfg.relief / 3.0, next_seed());
    const Eigen::Matrix3d tilt = (Eigen::AngleAxisd(rng.uniform(-35.0, 35.0) * kDeg, Eigen::Vector3d::UnitX()) *
                                  Eigen::AngleAxisd(rng.uniform(-35.0, 35.0) * kDeg, Eigen::Vector3d::UnitY()))
                                     .toRotationMatrix();
    s.normal = tilt * s.normal;
    s.u_axis = tilt * s.u_axis;
    s.v_axis = tilt * s.v_axis;
    geo.surfaces.push_back(s);
  } else {
    geo.surfaces.push_back(fronto_plane(pivot + cfg.relief * rng.uniform(0.6, 1.0), next_seed()));
    const int strips = 3 + static_cast<int>(rng.index(3));
    const double span = 6.0 * half_w, width = span / strips;
    for (int i = 0; i < strips; ++i) {
      Surface s = fronto_plane(pivot + rng.uniform(-0.75, 0.5) * cfg.relief, next_seed());
      s.u_min = -0.5 * span + i * width;
      s.u_max = s.u_min + width;
      geo.surfaces.push_back(s);
    }
  }

  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = k(1, 1) = cfg.focal_norm * static_cast<double>(cfg.width);
  k(0, 2) = 0.5 * static_cast<double>(cfg.width - 1);
  k(1, 2) = 0.5 * static_cast<double>(cfg.height - 1);

  SceneSample sample;
  sample.seed = seed;
  for (int v = 0; v < cfg.views; ++v) {
    const int ring = (v + 1) / 2;
    const double angle = v == 0 ? 0.0 : (v % 2 == 1 ? 1.0 : -1.0) * ring * arc;
    Camera cam = arc_camera(angle, pivot, k, cfg);
    cam.validate();
    RenderedView view = render_view(geo, cam, cfg.height, cfg.width);
    if (cfg.image_noise > 0.0) {
      for (auto& x : view.image.values()) x = std::clamp(x + rng.normal(0.0, cfg.image_noise), 0.0, 1.0);
    }
    if (v == 0) {
      sample.depth = std::move(view.depth);
      sample.depth_mask = std::move(view.mask);
    }
    sample.images.push_back(std::move(view.image));
    sample.cameras.push_back(cam);
  }
  sample.geometry = std::move(geo);
  return sample;
}

void validate_scene(const SceneSample& s, double min_margin) {
  if (s.views() < 2 || s.cameras.size() != s.images.size()) throw Error("scene: need >= 2 views with one camera each");
  const std::int64_t h = s.depth.dim(0), w = s.depth.dim(1);
  if (!s.depth_mask.same_shape(s.depth)) throw Error("scene: depth mask shape differs from depth");
  const Camera& ref = s.cameras.front();
  for (std::size_t v = 0; v < s.images.size(); ++v) {
    const auto& img = s.images[v];
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != h || img.dim(2) != w) {
      throw Error("scene: view " + std::to_string(v) + " has shape " + shape_string(img.shape()));
    }
    if (!img.all_finite()) throw Error("scene: non-finite pixel in view " + std::to_string(v));
    s.cameras[v].validate();
    if (s.cameras[v].d_near != ref.d_near || s.cameras[v].d_far != ref.d_far) {
      throw Error("scene: cameras disagree on the depth range");
    }
  }
  const double lo = 1.0 / ref.d_far + min_margin, hi = 1.0 / ref.d_near - min_margin;
  std::int64_t valid = 0;
  for (std::int64_t p = 0; p < s.depth.numel(); ++p) {
    if (s.depth_mask[p] == 0.0) continue;
    ++valid;
    const double d = s.depth[p];
    if (!(d >= ref.d_near && d <= ref.d_far)) throw Error("scene: GT depth " + std::to_string(d) + " out of range");
    if (1.0 / d < lo || 1.0 / d > hi) throw Error("scene: GT depth " + std::to_string(d) + " violates the margin");
  }
  if (valid == 0) throw Error("scene: no valid GT pixels");
}

}  // namespace deskmvs
