#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "deskmvs/geometry/hypotheses.hpp"
#include "deskmvs/scenes/dataset.hpp"
#include "deskmvs/scenes/scene.hpp"

using namespace deskmvs;

namespace {

constexpr GeometryKind kAllKinds[] = {GeometryKind::kPlanes, GeometryKind::kSlanted, GeometryKind::kSteps};

// |I_ref(p) - I_src(project(X_p))| over reference pixels whose GT point is
// visible in the source view, in units of 1/255. Source colours are bilinear.
std::vector<double> reprojection_errors(const SceneSample& s) {
  std::vector<double> errs;
  const Camera& ref = s.cameras.front();
  const std::int64_t h = s.height(), w = s.width();
  for (int v = 1; v < s.views(); ++v) {
    const Camera& cam = s.cameras[static_cast<std::size_t>(v)];
    const Eigen::Vector3d centre = cam.center();
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t p = y * w + x;
        if (s.depth_mask[p] == 0.0) continue;
        const Eigen::Vector3d pt = backproject(ref, static_cast<double>(x), static_cast<double>(y), s.depth[p]);
        const Projection pr = project_point(cam, pt);
        const double u = pr.pixel.x(), q = pr.pixel.y();
        if (u < 0.0 || q < 0.0 || u > static_cast<double>(w - 1) || q > static_cast<double>(h - 1)) continue;
        const auto hit = s.geometry->cast(centre, (pt - centre).normalized());
        if (!hit || std::abs(hit->distance - (pt - centre).norm()) > 1e-6) continue;  // occluded
        const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(u), w - 2);
        const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(q), h - 2);
        const double ax = u - static_cast<double>(x0), ay = q - static_cast<double>(y0);
        for (std::int64_t c = 0; c < 3; ++c) {
          const Tensor& img = s.images[static_cast<std::size_t>(v)];
          auto at = [&](std::int64_t yy, std::int64_t xx) { return img[(c * h + yy) * w + xx]; };
          const double val = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                             ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
          errs.push_back(255.0 * std::abs(val - s.images[0][(c * h + y) * w + x]));
        }
      }
    }
  }
  return errs;
}

}  // namespace

TEST_CASE("scene generation is a pure function of seed and config") {
  SceneConfig cfg;
  const SceneSample a = generate_scene(42, cfg), b = generate_scene(42, cfg), c = generate_scene(43, cfg);
  CHECK(max_abs_diff(a.images[1], b.images[1]) == 0.0);
  CHECK(max_abs_diff(a.depth, b.depth) == 0.0);
  CHECK(max_abs_diff(a.images[0], c.images[0]) > 0.0);
}

TEST_CASE("every geometry satisfies the scene invariants with a one-step margin") {
  for (const auto kind : kAllKinds) {
    SceneConfig cfg;
    cfg.geometry = kind;
    const double step = inverse_depth_hypotheses(cfg.d_near, cfg.d_far, 16).inverse_step();
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const SceneSample s = generate_scene(seed, cfg);
      CHECK_NOTHROW(validate_scene(s, step));
      CHECK(s.views() == 3);
      for (const auto& img : s.images) {
        const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
        CHECK(*lo >= 0.0);
        CHECK(*hi <= 1.0);
      }
    }
  }
}

TEST_CASE("noiseless scenes are photo-consistent up to interpolation error") {
  for (const auto kind : kAllKinds) {
    SceneConfig cfg;
    cfg.geometry = kind;
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto e = reprojection_errors(generate_scene(seed, cfg));
      errs.insert(errs.end(), e.begin(), e.end());
    }
    REQUIRE(errs.size() > 1000);
    std::sort(errs.begin(), errs.end());
    double mean = 0.0;
    for (const double e : errs) mean += e / static_cast<double>(errs.size());
    INFO("geometry " << geometry_name(kind));
    CHECK(mean <= 2.0);
    CHECK(errs[errs.size() * 95 / 100] <= 2.0);
  }
}

TEST_CASE("ideal features are unit vectors per group") {
  SceneConfig cfg;
  cfg.geometry = GeometryKind::kSlanted;
  const SceneSample s = generate_scene(3, cfg);
  const Tensor f = render_ideal_features(*s.geometry, s.cameras[0], s.height(), s.width(), 0.125, 32, 8);
  REQUIRE(f.shape() == Shape{32, 8, 12});
  for (std::int64_t g = 0; g < 8; ++g) {
    double n2 = 0.0;
    for (std::int64_t c = 0; c < 4; ++c) n2 += f[(g * 4 + c) * 96 + 17] * f[(g * 4 + c) * 96 + 17];
    CHECK(n2 == doctest::Approx(1.0));
  }
  CHECK_THROWS(render_ideal_features(*s.geometry, s.cameras[0], s.height(), s.width(), 0.125, 24, 8));
}

TEST_CASE("scene config validation") {
  SceneConfig cfg;
  cfg.views = 1;
  CHECK_THROWS(cfg.validate());
  cfg = SceneConfig{};
  cfg.height = 0;
  CHECK_THROWS(cfg.validate());
  CHECK_THROWS_AS(parse_geometry("cubes"), ConfigError);
}

TEST_CASE("dataset plans have distinct seeds and the requested split") {
  const Dataset ds = plan_dataset(9, 50, 0.8, SceneConfig{});
  CHECK(ds.train.size() == 40);
  CHECK(ds.val.size() == 10);
  std::set<std::uint64_t> seeds;
  for (const auto& e : ds.train) seeds.insert(e.seed);
  for (const auto& e : ds.val) seeds.insert(e.seed);
  CHECK(seeds.size() == 50);
}

TEST_CASE("scenes written to disk read back in float precision") {
  const auto root = std::filesystem::temp_directory_path() / "deskmvs_dataset_test";
  std::filesystem::remove_all(root);
  const Dataset ds = generate_dataset(root, 5, 3, 0.67, SceneConfig{});
  const auto entries = read_manifest(root);
  REQUIRE(entries.size() == 3);
  const SceneSample orig = generate_scene(entries[0].seed, SceneConfig{});
  const SceneSample back = read_scene(root / entries[0].dir);
  CHECK(back.views() == orig.views());
  CHECK(max_abs_diff(back.images[2], orig.images[2]) < 1e-6);
  CHECK(max_abs_diff(back.depth, orig.depth) < 1e-3);
  CHECK((back.cameras[1].R - orig.cameras[1].R).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_FALSE(back.geometry.has_value());
  std::filesystem::remove_all(root);
}

TEST_CASE("PFM round trip keeps row order") {
  const auto path = std::filesystem::temp_directory_path() / "deskmvs_pfm_test.pfm";
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  write_pfm(path, t);
  CHECK(max_abs_diff(read_pfm(path), t) == 0.0);
  std::filesystem::remove(path);
}
