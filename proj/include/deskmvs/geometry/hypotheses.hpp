#pragma once

#include <optional>
#include <vector>

#include "deskmvs/numerics/tensor.hpp"

namespace deskmvs {

// Depths in mm, ascending (so 1/d is a decreasing arithmetic sequence).
struct DepthHypotheses {
  std::vector<double> values;
  int stage = 0;

  std::size_t size() const noexcept { return values.size(); }
  // Spacing of the inverse-depth sequence (>= 0).
  double inverse_step() const;
};

// Without `center`: D hypotheses spanning [d_near, d_far] uniformly in 1/d.
// With `center` and `inverse_span`: D hypotheses uniform in 1/d over a window of
// width inverse_span (1/mm) around 1/center. A window that leaves the scene
// range is shifted back inside; one wider than the range is clipped to it.
DepthHypotheses inverse_depth_hypotheses(double d_near, double d_far, int count,
                                         std::optional<double> center = std::nullopt,
                                         std::optional<double> inverse_span = std::nullopt, int stage = 0);

// Per-pixel refinement around a depth map prev[H,W] -> [D,H,W].
Tensor refine_hypotheses(const Tensor& prev_depth, double d_near, double d_far, int count, double inverse_span);

// Broadcasts a global hypothesis list to a [D,H,W] volume.
Tensor hypothesis_volume(const DepthHypotheses& hyps, std::int64_t h, std::int64_t w);

// Index of the hypothesis nearest to `depth` in inverse depth. `column` points
// at D entries with stride `stride`.
int nearest_inverse_bin(const double* column, std::int64_t count, std::int64_t stride, double depth);

}  // namespace deskmvs
