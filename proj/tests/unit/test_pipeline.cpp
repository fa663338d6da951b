#include <doctest.h>

#include <cmath>

#include "deskmvs/numerics/random.hpp"
#include "deskmvs/pipeline/depth.hpp"
#include "deskmvs/pipeline/model.hpp"
#include "deskmvs/pipeline/train.hpp"

using namespace deskmvs;

namespace {

Tensor flat_volume(std::vector<double> column) {
  const auto d = static_cast<std::int64_t>(column.size());
  return Tensor({d, 1, 1}, std::move(column));
}

}  // namespace

TEST_CASE("depth expectation at a known distribution") {
  const Tensor hyps = flat_volume({500.0, 600.0, 700.0});
  const Tensor logits = flat_volume({0.0, std::log(2.0), std::log(3.0)});
  CHECK(depth_expectation(logits, hyps)[0] == doctest::Approx((500.0 + 1200.0 + 2100.0) / 6.0));
  // Temperature 2 halves the logits.
  const double w1 = 1.0, w2 = std::sqrt(2.0), w3 = std::sqrt(3.0);
  CHECK(depth_expectation(logits, hyps, 2.0)[0] ==
        doctest::Approx((500.0 * w1 + 600.0 * w2 + 700.0 * w3) / (w1 + w2 + w3)));
  CHECK_THROWS_AS(depth_expectation(logits, hyps, 0.0), ArgumentError);
}

TEST_CASE("confidence is the largest probability") {
  const Tensor logits = flat_volume({0.0, std::log(3.0)});
  CHECK(depth_confidence(logits)[0] == doctest::Approx(0.75));
}

TEST_CASE("winner-take-all ties go to the lower index") {
  const Tensor s = flat_volume({1.0, 3.0, 3.0, 2.0});
  CHECK(wta_index(s)[0] == 1);
  CHECK(wta_depth(s, flat_volume({1, 2, 3, 4}))[0] == 2.0);
}

TEST_CASE("labels use the nearest inverse bin and mask out-of-window GT") {
  const Tensor hyps({3, 1, 3}, std::vector<double>{500, 500, 500, 600, 600, 600, 700, 700, 700});
  const Tensor gt({1, 3}, std::vector<double>{545.0, 560.0, 900.0});
  const DepthLabels lab = depth_labels(gt, Tensor({1, 3}, 1.0), hyps);
  // 1/545 is nearer 1/500 than 1/600 (the depth midpoint would be 550).
  CHECK(lab.labels[0] == 0);
  CHECK(lab.labels[1] == 1);
  CHECK(lab.mask[2] == 0.0);
  CHECK(lab.valid == 2);
}

TEST_CASE("cross entropy ignores masked pixels") {
  Tape tape;
  const Tensor logits({2, 1, 2}, std::vector<double>{0.0, 5.0, std::log(3.0), -5.0});
  const Var l = cross_entropy_depth(tape.constant(logits), {1, 0}, Tensor({1, 2}, std::vector<double>{1.0, 0.0}));
  CHECK(l.value()[0] == doctest::Approx(-std::log(0.75)));
  CHECK_THROWS(cross_entropy_depth(tape.constant(logits), {1, 0}, Tensor({1, 2}, 0.0)));
}

TEST_CASE("error ratios count strictly larger errors") {
  const Tensor gt({1, 4}, 500.0);
  const Tensor pred({1, 4}, std::vector<double>{500.0, 502.0, 505.0, 520.0});
  const auto r = depth_error_ratios(pred, gt, Tensor({1, 4}, 1.0));
  CHECK(r[0] == doctest::Approx(0.5));
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[2] == doctest::Approx(0.25));
}

TEST_CASE("nearest depth upsampling never blends across an edge") {
  const Tensor d({1, 2}, std::vector<double>{500.0, 900.0});
  const Tensor n = upsample_depth(d, 2.0, 2, 4, UpsampleMode::kNearest);
  for (const double v : n.values()) CHECK((v == 500.0 || v == 900.0));
  const Tensor b = upsample_depth(d, 2.0, 2, 4, UpsampleMode::kBilinear);
  CHECK(b[1] == doctest::Approx(2.0 / (1.0 / 500.0 + 1.0 / 900.0)));
}

TEST_CASE("depth map resampling follows i -> i / scale") {
  Tensor d({4, 4});
  for (std::int64_t i = 0; i < 16; ++i) d[i] = 400.0 + static_cast<double>(i);
  const auto [s, m] = sample_depth_map(d, Tensor({4, 4}, 1.0), 0.5, 2, 2);
  CHECK(s[0] == 400.0);
  CHECK(s[3] == 400.0 + 10.0);
}

TEST_CASE("model config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.stages[1].regularizer = Regularizer::kCvt;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.stages[0].hypotheses = 15;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.groups = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("backbone stub is frozen and deterministic") {
  BackboneStub a(BackboneConfig{}), b(BackboneConfig{});
  for (Param* p : a.params()) CHECK_FALSE(p->trainable);
  Rng rng(1);
  const Tensor img = rng.uniform_tensor({3, 64, 96}, 0.0, 1.0);
  const auto ta = a.forward(img), tb = b.forward(img);
  REQUIRE(ta.size() == 3);
  CHECK(ta[0].shape() == Shape{32, 2, 3});
  CHECK(max_abs_diff(ta[2], tb[2]) == 0.0);
}

TEST_CASE("cost volume aggregation is a masked mean over views") {
  // Two identical source views must give the same volume as one.
  Rng rng(2);
  Tape tape(false);
  Camera cam;
  cam.K << 10, 0, 3.5, 0, 10, 2.5, 0, 0, 1;
  cam.d_near = 400.0;
  cam.d_far = 1000.0;
  const Var ref = tape.constant(rng.normal_tensor({8, 6, 8}));
  const Var src = tape.constant(rng.normal_tensor({8, 6, 8}));
  const Tensor hyps = hypothesis_volume(inverse_depth_hypotheses(400.0, 1000.0, 4), 6, 8);
  const std::array<Var, 1> one{src};
  const std::array<Var, 2> two{src, src};
  const std::array<Camera, 1> c1{cam};
  const std::array<Camera, 2> c2{cam, cam};
  const CostVolume a = build_cost_volume(ref, one, cam, c1, hyps, 4);
  const CostVolume b = build_cost_volume(ref, two, cam, c2, hyps, 4);
  CHECK(max_abs_diff(a.scores.value(), b.scores.value()) < 1e-12);
  CHECK(a.scores.shape() == Shape{4, 4, 6, 8});
}

TEST_CASE("cascade refinement on ideal features never increases the error ratios") {
  // Stage 0 at 1/8 with 16 global bins, stage 1 at 1/4 with 8 bins in a
  // window of two stage-0 spacings around the (nearest-upsampled) stage-0 WTA
  // depth. Both are scored on the 1/4 grid.
  SceneConfig sc;
  sc.height = 128;
  sc.width = 192;
  sc.geometry = GeometryKind::kSlanted;
  sc.arc_min_deg = 14.0;
  sc.arc_max_deg = 18.0;
  const DepthHypotheses global = inverse_depth_hypotheses(sc.d_near, sc.d_far, 16);
  const std::int64_t h0 = 16, w0 = 24, h1 = 32, w1 = 48;
  std::array<double, 3> sum0{}, sum1{};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SceneSample s = generate_scene(700 + seed, sc);
    auto wta_at = [&](double scale, const Tensor& hyps) {
      Tape tape(false);
      std::vector<Var> feats;
      std::vector<Camera> cams;
      for (int v = 0; v < s.views(); ++v) {
        const Camera& cam = s.cameras[static_cast<std::size_t>(v)];
        feats.push_back(tape.constant(render_ideal_features(*s.geometry, cam, sc.height, sc.width, scale, 32, 8)));
        cams.push_back(cam.scaled(scale));
      }
      const CostVolume cv = build_cost_volume(feats[0], std::span(feats).subspan(1), cams[0],
                                              std::span(cams).subspan(1), hyps, 8);
      return wta_depth(sum_groups(cv.scores.value()), hyps);
    };
    const Tensor d0 = wta_at(0.125, hypothesis_volume(global, h0, w0));
    const Tensor centre = upsample_depth(d0, 2.0, h1, w1, UpsampleMode::kNearest);
    const Tensor hyps1 = refine_hypotheses(centre, sc.d_near, sc.d_far, 8, 2.0 * global.inverse_step());
    const Tensor d1 = wta_at(0.25, hyps1);
    const auto [gt, mask] = sample_depth_map(s.depth, s.depth_mask, 0.25, h1, w1);
    const auto r0 = depth_error_ratios(centre, gt, mask);
    const auto r1 = depth_error_ratios(d1, gt, mask);
    for (int i = 0; i < 3; ++i) {
      CHECK(r1[static_cast<std::size_t>(i)] <= r0[static_cast<std::size_t>(i)]);
      sum0[static_cast<std::size_t>(i)] += r0[static_cast<std::size_t>(i)];
      sum1[static_cast<std::size_t>(i)] += r1[static_cast<std::size_t>(i)];
    }
  }
  MESSAGE("mean e2/e4/e8 stage 0: " << sum0[0] / 10 << " " << sum0[1] / 10 << " " << sum0[2] / 10
                                    << "  stage 1: " << sum1[0] / 10 << " " << sum1[1] / 10 << " " << sum1[2] / 10);
}
