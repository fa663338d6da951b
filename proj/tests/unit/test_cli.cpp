#include <doctest.h>

#include "deskmvs/cli/config.hpp"
#include "deskmvs/cli/experiments.hpp"
#include "deskmvs/cli/report.hpp"

using namespace deskmvs;
using namespace deskmvs::cli;

TEST_CASE("config lines flatten and later lines win") {
  const ConfigMap m = ConfigMap::parse(R"({"train": {"steps": 5, "lr": 0.01}}

{"train": {"steps": 7}, "model": {"cvt": {"layers": 2}}})");
  CHECK(m.get("train.steps", 0) == 7);
  CHECK(m.get("train.lr", 0.0) == doctest::Approx(0.01));
  CHECK(m.get("model.cvt.layers", 0) == 2);
  CHECK(m.get("absent", 3) == 3);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(ConfigMap::parse("{\"a\": 1"), ConfigError);
  CHECK_THROWS_AS(ConfigMap::parse("[1, 2]"), ConfigError);
  const ConfigMap m = ConfigMap::parse(R"({"train": {"steps": "many"}})");
  CHECK_THROWS_AS(m.get("train.steps", 0), ConfigError);
  const ConfigMap typo = ConfigMap::parse(R"({"train": {"stpes": 1}})");
  CHECK_NOTHROW(experiment_from(typo));
  CHECK_THROWS_AS(typo.reject_unused(), ConfigError);
  CHECK_THROWS_AS(experiment_from(ConfigMap::parse(R"({"train": {"batch": 0}})")), ConfigError);
  CHECK_THROWS_AS(experiment_from(ConfigMap::parse(R"({"model": {"cvt": {"scaling": "huge"}}})")), ConfigError);
  CHECK_THROWS_AS(experiment_from(ConfigMap::parse(R"({"scene": {"geometry": "torus"}})")), ConfigError);
}

TEST_CASE("config hash ignores key order and formatting") {
  const auto a = ConfigMap::parse(R"({"x": 1, "y": {"z": [1, 2]}})");
  const auto b = ConfigMap::parse("{\"y\":{\"z\":[1,2]}}\n{ \"x\" : 1 }");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != ConfigMap::parse(R"({"x": 2, "y": {"z": [1, 2]}})").hash());
}

TEST_CASE("experiment configs survive a JSON round trip") {
  ExperimentConfig c = default_experiment();
  c.model.stages = {{0.125, 32, Regularizer::kCvt}};
  c.model.cvt.scaling = ScalingRule::kDefault;
  c.train.steps = 11;
  c.scene.geometry = GeometryKind::kSteps;
  ConfigMap m = ConfigMap::parse(to_json(c).dump());
  const ExperimentConfig back = experiment_from(m);
  CHECK_NOTHROW(m.reject_unused());
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("default experiment calibrates AAS to the stage-0 token count") {
  const ExperimentConfig c = default_experiment();
  CHECK(c.model.cvt.mean_length == 48.0);
  CHECK(c.scene.height == 64);
  CHECK(c.scene.width == 96);
  CHECK(c.model.stages.size() == 2);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("csv quoting") {
  CHECK(csv_line({"a", "b,c", "say \"hi\""}) == "a,\"b,c\",\"say \"\"hi\"\"\"");
}

TEST_CASE("svg plot contains one polyline per series") {
  LinePlot p{"t", "x", "y", true, {{"a", {1, 10, 100}, {1, 2, 3}}, {"b<", {1, 10}, {0, 1}}}};
  const std::string svg = render_svg(p);
  std::size_t n = 0;
  for (std::size_t pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++n;
  CHECK(n == 2);
  CHECK(svg.find("b&lt;") != std::string::npos);
  p.series[0].xs[0] = 0.0;
  CHECK_THROWS(render_svg(p));
}

TEST_CASE("manifest carries seed, hash and version") {
  RunManifest m;
  m.seed = 12;
  m.config_hash = 0xabcULL;
  const auto j = manifest_json(m);
  CHECK(j["seed"] == 12);
  CHECK(j["config_hash"] == "0000000000000abc");
  CHECK(j.contains("version"));
  CHECK(j.contains("git_revision"));
}

TEST_CASE("ablation grid has six cumulative rows") {
  const auto rows = ablation_rows();
  REQUIRE(rows.size() == 6);
  ModelConfig first, last;
  rows.front().apply(first);
  rows.back().apply(last);
  CHECK(first.stages[0].regularizer == Regularizer::kConv3d);
  CHECK(last.cvt.fpe);
  CHECK(last.cvt.scaling == ScalingRule::kAas);
  CHECK(last.features.sva);
  CHECK(last.features.norm_als);
  for (const auto& r : rows) {
    ModelConfig c;
    r.apply(c);
    CHECK_NOTHROW(c.validate());
  }
}

TEST_CASE("entropy sweep: identical at the calibration length, default grows with n") {
  EntropySweepConfig c;
  c.head_dim = 16;
  c.lengths = {64, 128, 256, 512};
  c.mean_length = 128.0;
  c.seeds = 3;
  c.queries = 16;
  const EntropySweep s = run_entropy_sweep(c);
  REQUIRE(s.rows.size() == 4);
  CHECK(std::abs(s.rows[1].default_mean - s.rows[1].aas_mean) < 1e-10);
  for (std::size_t i = 1; i < s.rows.size(); ++i) CHECK(s.rows[i].default_mean > s.rows[i - 1].default_mean);
  CHECK(s.default_drift.size() == 3);
}
