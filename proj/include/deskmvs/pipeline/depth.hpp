#pragma once

#include <array>
#include <utility>

#include "deskmvs/geometry/hypotheses.hpp"
#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

inline constexpr double kInferenceTemperature = 1.0;
inline constexpr double kDiagnosticTemperature = 2.0;

// softmax(logits / tau) over D, then sum_k p_k d_k. logits and hypotheses are
// [D,H,W]; result [H,W].
Tensor depth_expectation(const Tensor& logits, const Tensor& hypotheses, double tau = kInferenceTemperature);
Tensor depth_expectation(const Tensor& logits, const DepthHypotheses& hyps, double tau = kInferenceTemperature);

// Max softmax probability per pixel at temperature tau.
Tensor depth_confidence(const Tensor& logits, double tau = kInferenceTemperature);

// Per-pixel argmax over D; ties go to the lower index. scores [D,H,W].
Tensor wta_depth(const Tensor& scores, const Tensor& hypotheses);
Tensor wta_depth(const Tensor& scores, const DepthHypotheses& hyps);
std::vector<int> wta_index(const Tensor& scores);

// Sums a [G,D,H,W] correlation volume over groups.
Tensor sum_groups(const Tensor& scores);

// Nearest-in-inverse-depth bin per pixel and the mask of pixels whose GT is
// valid and inside the local hypothesis span.
struct DepthLabels {
  std::vector<int> labels;
  Tensor mask;
  std::int64_t valid = 0;
};
DepthLabels depth_labels(const Tensor& gt, const Tensor& gt_mask, const Tensor& hypotheses);

// Mean cross-entropy against depth_labels. Throws ArgumentError if no pixel
// qualifies.
Var ce_depth_loss(Var logits, const Tensor& gt, const Tensor& hypotheses, const Tensor& gt_mask);

// Fractions of masked pixels with |pred - gt| above each threshold (mm).
std::array<double, 3> depth_error_ratios(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                                         std::array<double, 3> thresholds = {2.0, 4.0, 8.0});

// Resamples a full-resolution map to a grid at `scale`: pixel i of the output
// reads input coordinate i / scale (nearest). Returns (values, mask).
std::pair<Tensor, Tensor> sample_depth_map(const Tensor& depth, const Tensor& mask, double scale, std::int64_t height,
                                           std::int64_t width);

enum class UpsampleMode { kNearest, kBilinear };

// Resamples a depth map onto a grid `factor` times finer, with the same
// i <-> i / factor pixel correspondence (edges clamp). Bilinear interpolates
// in inverse depth; nearest never blends the two sides of an edge.
Tensor upsample_depth(const Tensor& depth, double factor, std::int64_t height, std::int64_t width,
                      UpsampleMode mode = UpsampleMode::kBilinear);

}  // namespace deskmvs
