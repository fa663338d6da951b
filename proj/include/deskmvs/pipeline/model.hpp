#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deskmvs/blocks/regularizers.hpp"
#include "deskmvs/blocks/transformer.hpp"
#include "deskmvs/geometry/hypotheses.hpp"
#include "deskmvs/pipeline/depth.hpp"
#include "deskmvs/scenes/scene.hpp"

namespace deskmvs {

// ---- frozen backbone ---------------------------------------------------------

struct BackboneConfig {
  std::int64_t dim = 32;
  int layers = 12;
  std::array<int, 3> taps{3, 7, 11};
  std::uint64_t seed = 0x5EEDBACCULL;
};

// Stand-in for a pretrained ViT: 2x downsample, 16x16 patch embedding (so
// 1/32 of the input), residual conv layers, three tapped outputs. Every
// parameter is frozen and the outputs are plain tensors.
class BackboneStub {
 public:
  explicit BackboneStub(BackboneConfig cfg);

  // image [3,H,W] with H, W divisible by 32 -> 3 maps [dim, H/32, W/32].
  std::vector<Tensor> forward(const Tensor& image);
  ParamList params();
  const BackboneConfig& config() const noexcept { return cfg_; }

 private:
  BackboneConfig cfg_;
  Param embed_w_, embed_b_;
  std::vector<Param> layer_w_, layer_b_;
};

std::vector<Tensor> backbone_stub_forward(BackboneStub& backbone, const Tensor& image);

// ---- trainable feature network ------------------------------------------------

struct FeatureConfig {
  std::int64_t coarse_channels = 32;  // 1/8 scale
  std::int64_t fine_channels = 32;    // 1/4 scale
  bool sva = true;
  bool norm_als = true;
  std::int64_t sva_heads = 4;
  AttentionKind sva_attention = AttentionKind::kLinear;
  int fine_sva_blocks = 2;
};

struct ViewFeatures {
  std::vector<Var> coarse;  // per view [Cc, H/8, W/8]
  std::vector<Var> fine;    // per view [Cf, H/4, W/4]
};

// Strided-conv pyramid fused with the backbone taps; with `sva` the taps pass
// through cross-view blocks (one per tap after the first) and two more blocks
// run at 1/8 with a normalised 2D encoding added.
class FeatureNet {
 public:
  FeatureNet(std::string prefix, FeatureConfig cfg, std::int64_t backbone_dim, int taps, Rng& rng);

  ViewFeatures forward(Tape& tape, std::span<const Tensor> images, const std::vector<std::vector<Tensor>>& taps);
  ParamList params();
  const FeatureConfig& config() const noexcept { return cfg_; }

 private:
  Var backbone_tokens(Tape& tape, const Tensor& tap, int layer);

  FeatureConfig cfg_;
  std::int64_t backbone_dim_;
  // Three pyramid levels (1/2, 1/4, 1/8): a stride-2 conv then a residual 3x3.
  std::array<Param, 3> down_w_, down_b_, refine_w_, refine_b_;
  Param fuse_w_, fuse_b_, top_w_, top_b_, lat_w_, lat_b_, smooth_w_, smooth_b_;
  std::unique_ptr<AlsCoeffs> als_;
  std::vector<std::unique_ptr<SvaBlock>> coarse_sva_, fine_sva_;
};

// ---- cost volume -------------------------------------------------------------

struct CostVolume {
  Var scores;         // [G, D, H, W]
  Tensor valid;       // [D, H, W]
  Tensor hypotheses;  // [D, H, W]
  int stage = 0;
};

// Cameras must be scaled to the feature grid. hypotheses is [D,H,W].
CostVolume build_cost_volume(Var ref_feat, std::span<const Var> src_feats, const Camera& ref_cam,
                             std::span<const Camera> src_cams, const Tensor& hypotheses, std::int64_t groups,
                             int stage = 0);

// ---- cascade -------------------------------------------------------------------

enum class Regularizer { kCvt, kConv3d };

struct StageConfig {
  double scale = 0.125;
  int hypotheses = 16;
  Regularizer regularizer = Regularizer::kCvt;
};

struct ModelConfig {
  std::vector<StageConfig> stages{{0.125, 16, Regularizer::kCvt}, {0.25, 8, Regularizer::kConv3d}};
  std::int64_t groups = 8;
  BackboneConfig backbone;
  FeatureConfig features;
  CvtConfig cvt;
  std::int64_t conv3d_hidden = 8;
  // Inverse-depth width of the stage-1 window in stage-0 hypothesis steps;
  // halves for every later stage.
  double refine_window = 2.0;
  // How the previous depth map is brought to the next stage's grid to centre
  // the window.
  UpsampleMode refine_upsample = UpsampleMode::kNearest;
  double temperature = kInferenceTemperature;

  // Throws ConfigError.
  void validate() const;
};

struct StagePrediction {
  int stage = 0;
  double scale = 0.0;
  Camera camera;      // reference camera at this stage's grid
  Var logits;         // [D, H, W]
  Tensor hypotheses;  // [D, H, W]
  Tensor depth;       // [H, W], expectation at the configured temperature
  Tensor confidence;  // [H, W]
};

class MvsModel {
 public:
  MvsModel(ModelConfig cfg, std::uint64_t seed);

  std::vector<StagePrediction> forward(Tape& tape, const SceneSample& sample);

  ParamList params();  // trainable and frozen
  ParamList trainable_params();
  ParamList frozen_params() { return backbone_.params(); }
  const ModelConfig& config() const noexcept { return cfg_; }

 private:
  ModelConfig cfg_;
  BackboneStub backbone_;
  std::unique_ptr<FeatureNet> features_;
  std::unique_ptr<CostVolumeTransformer> cvt_;
  std::vector<std::unique_ptr<Conv3dRegularizer>> conv_regs_;  // one per stage, null where CVT runs
};

std::vector<StagePrediction> cascade_forward(Tape& tape, MvsModel& model, const SceneSample& sample);

// Sum over stages of ce_depth_loss against the GT resampled to each stage;
// stages without a labelled pixel are skipped (throws if all are).
Var cascade_loss(const std::vector<StagePrediction>& preds, const SceneSample& sample);

// GT depth and mask on a stage grid.
std::pair<Tensor, Tensor> stage_ground_truth(const SceneSample& sample, const StagePrediction& pred);

}  // namespace deskmvs
