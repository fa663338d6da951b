#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "deskmvs/geometry/camera.hpp"
#include "deskmvs/geometry/hypotheses.hpp"
#include "deskmvs/geometry/warp.hpp"
#include "deskmvs/numerics/random.hpp"
#include "helpers.hpp"

using namespace deskmvs;

TEST_CASE("project inverts backproject") {
  const Camera ref = testing::pinhole(500.0, 48, 64);
  const Camera src = testing::orbit(ref, 8.0, 700.0);
  for (const Camera& cam : {ref, src}) {
    const Eigen::Vector3d x = backproject(cam, 12.5, 30.25, 640.0);
    const Projection p = project_point(cam, x);
    CHECK(p.pixel.x() == doctest::Approx(12.5));
    CHECK(p.pixel.y() == doctest::Approx(30.25));
    CHECK(p.depth == doctest::Approx(640.0));
  }
}

TEST_CASE("orbit cameras look at the pivot") {
  const Camera ref = testing::pinhole(500.0, 49, 65);
  const Camera src = testing::orbit(ref, 10.0, 700.0);
  const Projection p = project_point(src, Eigen::Vector3d(0.0, 0.0, 700.0));
  CHECK(p.pixel.x() == doctest::Approx(32.0));
  CHECK(p.pixel.y() == doctest::Approx(24.0));
}

TEST_CASE("points behind the camera are rejected") {
  CHECK_THROWS_AS(project_point(testing::pinhole(100.0, 8, 8), Eigen::Vector3d(0, 0, -1)), ArgumentError);
}

TEST_CASE("camera validation") {
  Camera c = testing::pinhole(100.0, 8, 8);
  CHECK_NOTHROW(c.validate());
  c.R(0, 0) = 2.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = testing::pinhole(100.0, 8, 8);
  c.d_far = c.d_near;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("scaled intrinsics keep the i <-> i/s correspondence") {
  const Camera c = testing::pinhole(400.0, 64, 96);
  const Camera s = c.scaled(0.25);
  const Eigen::Vector3d x = backproject(c, 40.0, 20.0, 600.0);
  const Projection p = project_point(s, x);
  CHECK(p.pixel.x() == doctest::Approx(10.0));
  CHECK(p.pixel.y() == doctest::Approx(5.0));
}

TEST_CASE("plane homography agrees with point transfer") {
  const Camera ref = testing::pinhole(300.0, 32, 40);
  const Camera src = testing::orbit(ref, 7.0, 650.0);
  const Eigen::Matrix3d hmat = plane_homography(ref, src, 720.0);
  const Eigen::Vector3d x = hmat * Eigen::Vector3d(5.0, 9.0, 1.0);
  const Projection p = project_point(src, backproject(ref, 5.0, 9.0, 720.0));
  CHECK(x.x() / x.z() == doctest::Approx(p.pixel.x()));
  CHECK(x.y() / x.z() == doctest::Approx(p.pixel.y()));
}

TEST_CASE("plane sweep coordinates match the homography") {
  const Camera ref = testing::pinhole(80.0, 6, 8);
  const Camera src = testing::orbit(ref, 5.0, 600.0);
  const DepthHypotheses hyps = inverse_depth_hypotheses(400.0, 1000.0, 3);
  const Tensor coords = plane_sweep_coords(ref, src, hypothesis_volume(hyps, 6, 8));
  const Eigen::Matrix3d hmat = plane_homography(ref, src, hyps.values[1]);
  const Eigen::Vector3d x = hmat * Eigen::Vector3d(3.0, 2.0, 1.0);
  CHECK(coords.at({1, 0, 2, 3}) == doctest::Approx(x.x() / x.z()));
  CHECK(coords.at({1, 1, 2, 3}) == doctest::Approx(x.y() / x.z()));
}

TEST_CASE("homography warp with an identical camera is the identity") {
  const Camera ref = testing::pinhole(50.0, 5, 6);
  Rng rng(1);
  const Tensor feat = rng.normal_tensor({2, 5, 6});
  const auto [warped, mask] = homography_warp(feat, ref, ref, 500.0);
  CHECK(max_abs_diff(warped, feat) < 1e-12);
  for (const double m : mask.values()) CHECK(m == 1.0);
}

TEST_CASE("global hypotheses are uniform in inverse depth and hit both ends") {
  const DepthHypotheses h = inverse_depth_hypotheses(400.0, 1000.0, 16);
  REQUIRE(h.size() == 16);
  CHECK(h.values.front() == 400.0);
  CHECK(h.values.back() == 1000.0);
  const double step = h.inverse_step();
  for (std::size_t k = 1; k < h.size(); ++k) {
    CHECK(1.0 / h.values[k - 1] - 1.0 / h.values[k] == doctest::Approx(step).epsilon(1e-9));
    CHECK(h.values[k] > h.values[k - 1]);
  }
  CHECK_THROWS_AS(inverse_depth_hypotheses(400.0, 1000.0, 1), ArgumentError);
  CHECK_THROWS_AS(inverse_depth_hypotheses(1000.0, 400.0, 4), ArgumentError);
}

TEST_CASE("refinement windows are centred, then shifted back into range") {
  const double span = 2e-4;
  const DepthHypotheses mid = inverse_depth_hypotheses(400.0, 1000.0, 8, 700.0, span);
  const double inv_mid = 0.5 * (1.0 / mid.values.front() + 1.0 / mid.values.back());
  CHECK(inv_mid == doctest::Approx(1.0 / 700.0));
  CHECK(1.0 / mid.values.front() - 1.0 / mid.values.back() == doctest::Approx(span));

  const DepthHypotheses edge = inverse_depth_hypotheses(400.0, 1000.0, 8, 990.0, span);
  CHECK(edge.values.back() == doctest::Approx(1000.0));
  CHECK(1.0 / edge.values.front() - 1.0 / edge.values.back() == doctest::Approx(span));

  const DepthHypotheses wide = inverse_depth_hypotheses(400.0, 1000.0, 8, 700.0, 1.0);
  CHECK(wide.values.front() == 400.0);
  CHECK(wide.values.back() == 1000.0);
}

TEST_CASE("per-pixel refinement stays inside the configured window") {
  Rng rng(2);
  Tensor prev({4, 5});
  for (auto& v : prev.values()) v = rng.uniform(400.0, 1000.0);
  const double span = 1.5e-4;
  const Tensor h = refine_hypotheses(prev, 400.0, 1000.0, 6, span);
  for (std::int64_t p = 0; p < prev.numel(); ++p) {
    const double lo = 1.0 / h[5 * 20 + p], hi = 1.0 / h[p];
    CHECK(hi - lo == doctest::Approx(span).epsilon(1e-9));
    for (int k = 0; k < 6; ++k) {
      const double inv = 1.0 / h[k * 20 + p];
      CHECK(std::abs(inv - 1.0 / prev[p]) <= span + 1e-12);
      CHECK(h[k * 20 + p] >= 400.0 - 1e-9);
      CHECK(h[k * 20 + p] <= 1000.0 + 1e-9);
    }
  }
}

TEST_CASE("nearest inverse bin") {
  const DepthHypotheses h = inverse_depth_hypotheses(400.0, 1000.0, 4);
  CHECK(nearest_inverse_bin(h.values.data(), 4, 1, 401.0) == 0);
  CHECK(nearest_inverse_bin(h.values.data(), 4, 1, 999.0) == 3);
  // Midpoint in depth is not the midpoint in inverse depth.
  const double mid_inv = 0.5 * (1.0 / h.values[1] + 1.0 / h.values[2]);
  CHECK(nearest_inverse_bin(h.values.data(), 4, 1, 1.0 / (mid_inv + 1e-9)) == 1);
  CHECK(nearest_inverse_bin(h.values.data(), 4, 1, 1.0 / (mid_inv - 1e-9)) == 2);
}

TEST_CASE("frustum normalisation maps the grid into the unit cube") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double d_near = rng.uniform(100.0, 500.0), d_far = d_near + rng.uniform(50.0, 2000.0);
    const auto h = 2 + rng.index(20), w = 2 + rng.index(20);
    Camera cam = testing::pinhole(rng.uniform(20.0, 900.0), h, w, d_near, d_far);
    std::vector<double> depths;
    for (int k = 0; k < 5; ++k) depths.push_back(rng.uniform(d_near, d_far));
    depths.push_back(d_near);
    depths.push_back(d_far);
    const Tensor uvz = frustum_normalize(cam, FrustumGrid::dense(depths, h, w));
    const auto [lo, hi] = std::minmax_element(uvz.values().begin(), uvz.values().end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);
  }
}

TEST_CASE("frustum normalisation corners") {
  const Camera cam = testing::pinhole(100.0, 4, 5);
  const Tensor uvz = frustum_normalize(cam, FrustumGrid::dense({400.0, 1000.0}, 4, 5));
  const std::int64_t n = 2 * 4 * 5;
  CHECK(uvz[0] == 0.0);                       // u at x = 0
  CHECK(uvz[n + n - 1] == doctest::Approx(1.0));  // v at the last row
  CHECK(uvz[2 * n] == doctest::Approx(1.0));  // z at d_near
  CHECK(uvz[2 * n + n - 1] == doctest::Approx(0.0));
}

TEST_CASE("camera files round-trip") {
  const auto path = std::filesystem::temp_directory_path() / "deskmvs_cam_test.txt";
  const Camera c = testing::orbit(testing::pinhole(321.5, 30, 40), 9.0, 650.0);
  write_camera(path, c);
  const Camera r = read_camera(path);
  CHECK((r.K - c.K).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((r.R - c.R).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((r.t - c.t).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.d_near == c.d_near);
  std::filesystem::remove(path);
}
