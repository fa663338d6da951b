#include <doctest.h>

#include <cmath>

#include "deskmvs/attention/attention.hpp"
#include "deskmvs/encodings/positional.hpp"
#include "deskmvs/numerics/random.hpp"
#include "helpers.hpp"

using namespace deskmvs;

TEST_CASE("AAS reduces to the default scale at the mean length") {
  for (const double d : {8.0, 32.0, 64.0}) {
    for (const double nbar : {2.0, 48.0, 12186.0}) {
      CHECK(aas_scale(nbar, d, nbar) == doctest::Approx(1.0 / std::sqrt(d)).epsilon(1e-15));
    }
  }
}

TEST_CASE("AAS grows with the log of the sequence length") {
  const double a = aas_scale(1024.0, 64.0, 512.0), b = aas_scale(512.0, 64.0, 512.0);
  CHECK(a / b == doctest::Approx(std::log(1024.0) / std::log(512.0)));
  CHECK_THROWS_AS(aas_scale(1.0, 64.0, 512.0), ArgumentError);
}

TEST_CASE("scale_for follows the configured rule") {
  AttentionConfig c;
  c.d_model = 64;
  c.heads = 4;
  CHECK(c.scale_for(100) == doctest::Approx(0.25));
  c.scaling = ScalingRule::kAas;
  c.mean_length = 50.0;
  CHECK(c.scale_for(50) == doctest::Approx(0.25));
  c.scaling = ScalingRule::kFixed;
  c.fixed_scale = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("entropy of uniform and one-hot rows") {
  Tensor p({2, 4}, std::vector<double>{0.25, 0.25, 0.25, 0.25, 0, 1, 0, 0});
  const Tensor h = attention_entropy(p);
  CHECK(h[0] == doctest::Approx(std::log(4.0)));
  CHECK(h[1] == 0.0);
  CHECK_THROWS_AS(attention_entropy(Tensor({1, 2}, std::vector<double>{0.2, 0.2})), ArgumentError);
}

TEST_CASE("AAS recomputes the scale for every batch length") {
  Rng rng(1);
  AttentionConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.scaling = ScalingRule::kAas;
  c.mean_length = 16.0;
  ScaleProbe probe;
  for (const std::int64_t n : {8, 16, 64}) {
    Tape tape(false);
    const Var q = tape.constant(rng.normal_tensor({2, 3, 4}));
    const Var k = tape.constant(rng.normal_tensor({2, n, 4}));
    vanilla_attention(q, k, k, c);
  }
  REQUIRE(probe.records().size() == 3);
  CHECK(probe.records()[0].keys == 8);
  CHECK(probe.records()[1].scale == doctest::Approx(1.0 / 2.0));
  CHECK(probe.records()[2].scale == doctest::Approx(std::log(64.0) / (2.0 * std::log(16.0))));
}

TEST_CASE("vanilla attention equals a direct softmax computation") {
  Rng rng(2);
  Tape tape(false);
  const Tensor q = rng.normal_tensor({1, 2, 3}), k = rng.normal_tensor({1, 4, 3}), v = rng.normal_tensor({1, 4, 3});
  const Tensor out = attention_softmax(tape.constant(q), tape.constant(k), tape.constant(v), 0.5).value();
  for (int i = 0; i < 2; ++i) {
    double w[4], z = 0.0;
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) s += q[i * 3 + c] * k[j * 3 + c];
      w[j] = std::exp(0.5 * s);
      z += w[j];
    }
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) acc += w[j] / z * v[j * 3 + c];
      CHECK(out[i * 3 + c] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("sinusoids start at sin 0 and cos 0") {
  const std::vector<double> pos{0.0, 1.0};
  const Tensor e = sinusoid_1d(pos, 4);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
  CHECK(e[4] == doctest::Approx(std::sin(1.0)));
  CHECK(e[6] == doctest::Approx(std::sin(0.01)));
  CHECK_THROWS_AS(sinusoid_1d(pos, 3), ArgumentError);
}

TEST_CASE("normalised 2D encoding is resolution covariant") {
  const std::int64_t c = 16;
  const Tensor small = normalized_pe_2d(9, 5, c), large = normalized_pe_2d(33, 17, c);
  // Row 2 of 9 and row 8 of 33 sit at the same normalised height, and so on.
  for (std::int64_t ch = 0; ch < c; ++ch) {
    CHECK(small.at({ch, 2, 1}) == doctest::Approx(large.at({ch, 8, 4})).epsilon(1e-12));
    CHECK(small.at({ch, 8, 4}) == doctest::Approx(large.at({ch, 32, 16})).epsilon(1e-12));
  }
}

TEST_CASE("frustum encoding depends only on normalised coordinates") {
  const Camera a = testing::pinhole(100.0, 5, 5), b = testing::pinhole(900.0, 9, 9);
  const Tensor fa = fpe_features(a, FrustumGrid::dense({400.0, 1000.0}, 5, 5), 8);
  const Tensor fb = fpe_features(b, FrustumGrid::dense({400.0, 1000.0}, 9, 9), 8);
  // Cell (d=1, y=2, x=4) of the 5x5 grid sits where cell (1, 4, 8) of the 9x9 does.
  for (std::int64_t ch = 0; ch < 24; ++ch) {
    CHECK(fa[(25 + 2 * 5 + 4) * 24 + ch] == doctest::Approx(fb[(81 + 4 * 9 + 8) * 24 + ch]).epsilon(1e-12));
  }
}
