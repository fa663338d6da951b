#include <doctest.h>

#include "deskmvs/blocks/regularizers.hpp"
#include "deskmvs/blocks/transformer.hpp"
#include "deskmvs/geometry/hypotheses.hpp"
#include "deskmvs/numerics/ops.hpp"
#include "helpers.hpp"

using namespace deskmvs;

namespace {

BlockConfig small_block(LnPlacement ln, bool cross = false) {
  BlockConfig b;
  b.d_model = 8;
  b.ln = ln;
  b.cross = cross;
  b.attention.d_model = 8;
  b.attention.heads = 2;
  return b;
}

}  // namespace

TEST_CASE("blocks preserve the token shape") {
  Rng rng(1);
  for (const auto ln : {LnPlacement::kPre, LnPlacement::kPost}) {
    TransformerBlock self("s", small_block(ln), rng), cross("c", small_block(ln, true), rng);
    Tape tape(false);
    const Var x = tape.constant(rng.normal_tensor({5, 8}));
    const Var kv = tape.constant(rng.normal_tensor({9, 8}));
    CHECK(self.forward(tape, x).shape() == Shape{5, 8});
    CHECK(cross.forward(tape, x, kv).shape() == Shape{5, 8});
    CHECK_THROWS(cross.forward(tape, x));
    CHECK_THROWS(self.forward(tape, x, kv));
  }
}

TEST_CASE("a zeroed pre-LN block is the identity") {
  Rng rng(2);
  TransformerBlock b("b", small_block(LnPlacement::kPre), rng);
  b.zero_residual_branches();
  Tape tape(false);
  const Tensor x = rng.normal_tensor({4, 8});
  CHECK(max_abs_diff(b.forward(tape, tape.constant(x)).value(), x) < 1e-12);
}

TEST_CASE("post-LN output rows are normalised") {
  Rng rng(3);
  TransformerBlock b("b", small_block(LnPlacement::kPost), rng);
  Tape tape(false);
  const Tensor y = b.forward(tape, tape.constant(rng.normal_tensor({3, 8}, 5.0))).value();
  for (int r = 0; r < 3; ++r) {
    double m = 0.0;
    for (int c = 0; c < 8; ++c) m += y[r * 8 + c] / 8.0;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("block configs are validated") {
  BlockConfig b = small_block(LnPlacement::kPre);
  b.attention.d_model = 16;
  CHECK_THROWS(b.validate());
  b = small_block(LnPlacement::kPre);
  b.attention.heads = 3;
  CHECK_THROWS(b.validate());
}

TEST_CASE("ALS layers start at the initial scale and are independent") {
  AlsCoeffs als("als", 3, 4, 0.5);
  CHECK(als.layers() == 3);
  CHECK(als.params().size() == 3);
  als.scale(1).value.fill(2.0);
  Tape tape(false);
  const Var x = tape.constant(Tensor({1, 4}, 1.0));
  CHECK(als.apply(tape, x, 0).value()[0] == doctest::Approx(0.5));
  CHECK(als.apply(tape, x, 1).value()[0] == doctest::Approx(2.0));
  CHECK_THROWS(als.apply(tape, x, 3));
}

TEST_CASE("SVA block keeps every stream's shape") {
  Rng rng(4);
  SvaBlock sva("sva", 8, 2, AttentionKind::kLinear, rng);
  Tape tape(false);
  SvaStreams in{tape.constant(rng.normal_tensor({6, 8})),
                {tape.constant(rng.normal_tensor({6, 8})), tape.constant(rng.normal_tensor({6, 8}))}};
  const SvaStreams out = sva.forward(tape, in);
  CHECK(out.ref.shape() == Shape{6, 8});
  REQUIRE(out.srcs.size() == 2);
  CHECK(out.srcs[1].shape() == Shape{6, 8});
}

TEST_CASE("CVT sequence length counts patches") {
  CHECK(cvt_sequence_length(16, 8, 12) == 8 * 2 * 3);
  CHECK(cvt_sequence_length(32, 64, 64) == 16 * 16 * 16);
}

TEST_CASE("CVT maps a cost volume to logits of the same grid") {
  Rng rng(5);
  CvtConfig c;
  c.groups = 4;
  c.channels = 16;
  c.layers = 2;
  c.heads = 2;
  c.mean_length = 8.0;
  CostVolumeTransformer cvt("cvt", c, rng);
  const Camera cam = testing::pinhole(20.0, 8, 8);
  const DepthHypotheses hyps = inverse_depth_hypotheses(400.0, 1000.0, 4);
  Tape tape(false);
  const Var cost = tape.constant(rng.normal_tensor({4, 4, 8, 8}));
  CHECK(cvt.forward(tape, cost, cam, hyps, 0).shape() == Shape{4, 8, 8});
  CHECK_THROWS(cvt.forward(tape, cost, cam, hyps, 1));
  CHECK_THROWS(cvt.forward(tape, tape.constant(rng.normal_tensor({4, 3, 8, 8})), cam, hyps, 0));
}

TEST_CASE("disabling the cost skip drops its parameters") {
  Rng rng(6);
  CvtConfig c;
  c.groups = 4;
  c.channels = 16;
  c.layers = 1;
  c.heads = 2;
  CostVolumeTransformer with("a", c, rng);
  c.cost_skip = false;
  CostVolumeTransformer without("b", c, rng);
  CHECK(count_parameters(with.params()) == count_parameters(without.params()) + 4 + 1);
}

TEST_CASE("conv3d regularizer output shape") {
  Rng rng(7);
  Conv3dRegularizer reg("r", 4, 6, rng);
  Tape tape(false);
  CHECK(reg.forward(tape, tape.constant(rng.normal_tensor({4, 5, 6, 7}))).shape() == Shape{5, 6, 7});
}
