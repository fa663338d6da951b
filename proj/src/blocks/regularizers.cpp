#include "deskmvs/blocks/regularizers.hpp"

#include "deskmvs/encodings/positional.hpp"
#include "deskmvs/numerics/init.hpp"

namespace deskmvs {

std::int64_t cvt_sequence_length(std::int64_t depth, std::int64_t height, std::int64_t width, PatchStride stride) {
  if (depth % stride.d || height % stride.h || width % stride.w) {
    throw ShapeError("cost volume extents not divisible by the patch stride");
  }
  return (depth / stride.d) * (height / stride.h) * (width / stride.w);
}

CostVolumeTransformer::CostVolumeTransformer(std::string prefix, CvtConfig cfg, Rng& rng) : cfg_(cfg) {
  const std::int64_t c = cfg_.channels, k = cfg_.groups * cfg_.stride.volume();
  patch_w_ = affine_init(prefix + ".patch.w", {c, k}, k, rng);
  patch_b_ = affine_init(prefix + ".patch.b", {c}, k, rng);
  fpe_proj_ = affine_init(prefix + ".fpe.proj", {3 * c, c}, 3 * c, rng);
  unpatch_w_ = affine_init(prefix + ".unpatch.w", {c, cfg_.stride.volume()}, c, rng);
  unpatch_b_ = affine_init(prefix + ".unpatch.b", {1}, c, rng);
  skip_w_ = affine_init(prefix + ".skip.w", {1, cfg_.groups, 1, 1, 1}, cfg_.groups, rng);
  skip_b_ = constant_init(prefix + ".skip.b", {1}, 0.0);
  BlockConfig bc;
  bc.d_model = c;
  bc.ln = cfg_.ln;
  bc.attention.d_model = c;
  bc.attention.heads = cfg_.heads;
  bc.attention.kind = cfg_.kind;
  bc.attention.scaling = cfg_.scaling;
  bc.attention.mean_length = cfg_.mean_length;
  for (std::int64_t l = 0; l < cfg_.layers; ++l) {
    blocks_.push_back(std::make_unique<TransformerBlock>(prefix + ".block" + std::to_string(l), bc, rng));
  }
}

Var CostVolumeTransformer::forward(Tape& tape, Var cost, const Camera& ref, const DepthHypotheses& hyps, int stage) {
  if (stage != 0) throw ArgumentError("the cost-volume transformer only runs on the first stage");
  const auto& cv = cost.value();
  if (cv.rank() != 4 || cv.dim(0) != cfg_.groups) {
    throw ShapeError("CVT: cost volume must be [" + std::to_string(cfg_.groups) + ",D,H,W], got " +
                     shape_string(cv.shape()));
  }
  const std::int64_t d = cv.dim(1), h = cv.dim(2), w = cv.dim(3);
  if (static_cast<std::int64_t>(hyps.size()) != d) throw ShapeError("CVT: hypothesis count differs from volume depth");
  const auto& st = cfg_.stride;
  const std::int64_t n = cvt_sequence_length(d, h, w, st), c = cfg_.channels;
  const std::int64_t dp = d / st.d, hp = h / st.h, wp = w / st.w;

  Var tokens = transpose(reshape(patchify3d(cost, tape.param(patch_w_), tape.param(patch_b_), st), {c, n}));
  if (cfg_.fpe) {
    FrustumGrid grid;
    grid.height = h;
    grid.width = w;
    for (std::int64_t z = 0; z < dp; ++z) {
      // Block centre in inverse depth (hypotheses are inverse-uniform).
      double inv = 0.0;
      for (std::int64_t j = 0; j < st.d; ++j) inv += 1.0 / hyps.values[static_cast<std::size_t>(z * st.d + j)];
      grid.depths.push_back(static_cast<double>(st.d) / inv);
    }
    for (std::int64_t y = 0; y < hp; ++y) grid.ys.push_back(static_cast<double>(y * st.h) + 0.5 * (st.h - 1));
    for (std::int64_t x = 0; x < wp; ++x) grid.xs.push_back(static_cast<double>(x * st.w) + 0.5 * (st.w - 1));
    tokens = add(tokens, fpe_3d(tape, ref, grid, tape.param(fpe_proj_)));
  }
  for (auto& b : blocks_) tokens = b->forward(tape, tokens);
  Var grid = reshape(transpose(tokens), {c, dp, hp, wp});
  Var logits = unpatchify3d(grid, tape.param(unpatch_w_), tape.param(unpatch_b_), 1, st);
  if (cfg_.cost_skip) logits = add(logits, conv3d(cost, tape.param(skip_w_), tape.param(skip_b_)));
  return reshape(logits, {d, h, w});
}

ParamList CostVolumeTransformer::params() {
  ParamList out{&patch_w_, &patch_b_, &unpatch_w_, &unpatch_b_};
  if (cfg_.fpe) out.push_back(&fpe_proj_);
  if (cfg_.cost_skip) {
    out.push_back(&skip_w_);
    out.push_back(&skip_b_);
  }
  for (auto& b : blocks_) {
    for (Param* p : b->params()) out.push_back(p);
  }
  return out;
}

Conv3dRegularizer::Conv3dRegularizer(std::string prefix, std::int64_t groups, std::int64_t hidden, Rng& rng) {
  const std::int64_t f1 = groups * 27, f2 = hidden * 27;
  w1_ = affine_init(prefix + ".w1", {hidden, groups, 3, 3, 3}, f1, rng);
  b1_ = affine_init(prefix + ".b1", {hidden}, f1, rng);
  w2_ = affine_init(prefix + ".w2", {hidden, hidden, 3, 3, 3}, f2, rng);
  b2_ = affine_init(prefix + ".b2", {hidden}, f2, rng);
  w3_ = affine_init(prefix + ".w3", {1, hidden, 3, 3, 3}, f2, rng);
  b3_ = affine_init(prefix + ".b3", {1}, f2, rng);
}

Var Conv3dRegularizer::forward(Tape& tape, Var cost) {
  if (cost.value().rank() != 4) throw ShapeError("conv3d regularizer: cost volume must be [G,D,H,W]");
  Var x = gelu(conv3d(cost, tape.param(w1_), tape.param(b1_)));
  x = gelu(conv3d(x, tape.param(w2_), tape.param(b2_)));
  x = conv3d(x, tape.param(w3_), tape.param(b3_));
  const auto& s = x.shape();
  return reshape(x, {s[1], s[2], s[3]});
}

ParamList Conv3dRegularizer::params() { return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}; }

}  // namespace deskmvs
