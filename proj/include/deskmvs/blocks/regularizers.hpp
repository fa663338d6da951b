#pragma once

#include <memory>
#include <string>
#include <vector>

#include "deskmvs/blocks/transformer.hpp"
#include "deskmvs/geometry/camera.hpp"
#include "deskmvs/geometry/hypotheses.hpp"

namespace deskmvs {

struct CvtConfig {
  std::int64_t groups = 8;     // cost-volume groups G
  std::int64_t channels = 64;  // token width C
  std::int64_t layers = 6;
  std::int64_t heads = 8;
  LnPlacement ln = LnPlacement::kPost;
  AttentionKind kind = AttentionKind::kVanilla;
  ScalingRule scaling = ScalingRule::kAas;
  double mean_length = kDefaultMeanLength;
  bool fpe = true;
  // Adds a per-voxel linear read of the G group scores to the decoded logits,
  // so detail finer than a patch is not lost to the patch bottleneck.
  bool cost_skip = true;
  PatchStride stride;
};

// Sequence length seen by the transformer for a [G, D, H, W] cost volume.
std::int64_t cvt_sequence_length(std::int64_t depth, std::int64_t height, std::int64_t width,
                                 PatchStride stride = {});

// Cost-volume transformer: patchify -> (+ FPE) -> blocks -> unpatchify.
class CostVolumeTransformer {
 public:
  CostVolumeTransformer(std::string prefix, CvtConfig cfg, Rng& rng);

  // cost [G, D, H, W] -> logits [D, H, W]. `ref` must be scaled to the cost
  // grid and `hyps` must be the (global) hypotheses of the volume. Only valid
  // on the first cascade stage.
  Var forward(Tape& tape, Var cost, const Camera& ref, const DepthHypotheses& hyps, int stage);

  ParamList params();
  const CvtConfig& config() const noexcept { return cfg_; }

 private:
  CvtConfig cfg_;
  Param patch_w_, patch_b_, fpe_proj_, unpatch_w_, unpatch_b_, skip_w_, skip_b_;
  std::vector<std::unique_ptr<TransformerBlock>> blocks_;
};

// Small 3D CNN: conv3d(G->h), GELU, conv3d(h->h), GELU, conv3d(h->1).
class Conv3dRegularizer {
 public:
  Conv3dRegularizer(std::string prefix, std::int64_t groups, std::int64_t hidden, Rng& rng);

  Var forward(Tape& tape, Var cost);
  ParamList params();

 private:
  Param w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace deskmvs
