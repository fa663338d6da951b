#include "deskmvs/pipeline/depth.hpp"

#include <algorithm>
#include <cmath>

#include "deskmvs/numerics/ops.hpp"

namespace deskmvs {

namespace {

void check_volume(const Tensor& logits, const Tensor& hyps, const char* op) {
  if (logits.rank() != 3 || !logits.same_shape(hyps)) {
    throw ShapeError(std::string(op) + ": logits " + shape_string(logits.shape()) + " vs hypotheses " +
                     shape_string(hyps.shape()));
  }
}

Tensor broadcast(const DepthHypotheses& hyps, const Tensor& like) {
  if (like.rank() != 3 || like.dim(0) != static_cast<std::int64_t>(hyps.size())) {
    throw ShapeError("hypothesis count does not match volume " + shape_string(like.shape()));
  }
  return hypothesis_volume(hyps, like.dim(1), like.dim(2));
}

}  // namespace

Tensor depth_expectation(const Tensor& logits, const Tensor& hyps, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("depth_expectation: temperature must be > 0");
  check_volume(logits, hyps, "depth_expectation");
  const std::int64_t d = logits.dim(0), np = logits.dim(1) * logits.dim(2);
  Tensor out({logits.dim(1), logits.dim(2)});
  for (std::int64_t p = 0; p < np; ++p) {
    double m = logits[p];
    for (std::int64_t k = 1; k < d; ++k) m = std::max(m, logits[k * np + p]);
    double z = 0.0, acc = 0.0;
    for (std::int64_t k = 0; k < d; ++k) {
      const double e = std::exp((logits[k * np + p] - m) / tau);
      z += e;
      acc += e * hyps[k * np + p];
    }
    out[p] = acc / z;
  }
  return out;
}

Tensor depth_expectation(const Tensor& logits, const DepthHypotheses& hyps, double tau) {
  return depth_expectation(logits, broadcast(hyps, logits), tau);
}

Tensor depth_confidence(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("depth_confidence: temperature must be > 0");
  if (logits.rank() != 3) throw ShapeError("depth_confidence: logits must be [D,H,W]");
  const std::int64_t d = logits.dim(0), np = logits.dim(1) * logits.dim(2);
  Tensor out({logits.dim(1), logits.dim(2)});
  for (std::int64_t p = 0; p < np; ++p) {
    double m = logits[p];
    for (std::int64_t k = 1; k < d; ++k) m = std::max(m, logits[k * np + p]);
    double z = 0.0;
    for (std::int64_t k = 0; k < d; ++k) z += std::exp((logits[k * np + p] - m) / tau);
    out[p] = 1.0 / z;
  }
  return out;
}

std::vector<int> wta_index(const Tensor& scores) {
  if (scores.rank() != 3) throw ShapeError("wta: scores must be [D,H,W]");
  const std::int64_t d = scores.dim(0), np = scores.dim(1) * scores.dim(2);
  std::vector<int> idx(static_cast<std::size_t>(np), 0);
  for (std::int64_t p = 0; p < np; ++p) {
    double best = scores[p];
    for (std::int64_t k = 1; k < d; ++k) {
      if (scores[k * np + p] > best) {
        best = scores[k * np + p];
        idx[p] = static_cast<int>(k);
      }
    }
  }
  return idx;
}

Tensor wta_depth(const Tensor& scores, const Tensor& hyps) {
  check_volume(scores, hyps, "wta_depth");
  const std::int64_t np = scores.dim(1) * scores.dim(2);
  const auto idx = wta_index(scores);
  Tensor out({scores.dim(1), scores.dim(2)});
  for (std::int64_t p = 0; p < np; ++p) out[p] = hyps[idx[p] * np + p];
  return out;
}

Tensor wta_depth(const Tensor& scores, const DepthHypotheses& hyps) {
  return wta_depth(scores, broadcast(hyps, scores));
}

Tensor sum_groups(const Tensor& scores) {
  if (scores.rank() != 4) throw ShapeError("sum_groups: scores must be [G,D,H,W]");
  const std::int64_t g = scores.dim(0), n = scores.numel() / g;
  Tensor out({scores.dim(1), scores.dim(2), scores.dim(3)});
  for (std::int64_t gi = 0; gi < g; ++gi) {
    for (std::int64_t i = 0; i < n; ++i) out[i] += scores[gi * n + i];
  }
  return out;
}

DepthLabels depth_labels(const Tensor& gt, const Tensor& gt_mask, const Tensor& hyps) {
  if (hyps.rank() != 3 || gt.rank() != 2 || gt.dim(0) != hyps.dim(1) || gt.dim(1) != hyps.dim(2) ||
      !gt_mask.same_shape(gt)) {
    throw ShapeError("depth_labels: GT " + shape_string(gt.shape()) + " vs hypotheses " + shape_string(hyps.shape()));
  }
  const std::int64_t d = hyps.dim(0), np = gt.numel();
  DepthLabels out{std::vector<int>(static_cast<std::size_t>(np), 0), Tensor(gt.shape()), 0};
  for (std::int64_t p = 0; p < np; ++p) {
    if (gt_mask[p] == 0.0) continue;
    const double lo = std::min(hyps[p], hyps[(d - 1) * np + p]);
    const double hi = std::max(hyps[p], hyps[(d - 1) * np + p]);
    if (gt[p] < lo || gt[p] > hi) continue;
    out.labels[p] = nearest_inverse_bin(hyps.data() + p, d, np, gt[p]);
    out.mask[p] = 1.0;
    ++out.valid;
  }
  return out;
}

Var ce_depth_loss(Var logits, const Tensor& gt, const Tensor& hyps, const Tensor& gt_mask) {
  check_volume(logits.value(), hyps, "ce_depth_loss");
  const DepthLabels lab = depth_labels(gt, gt_mask, hyps);
  if (lab.valid == 0) throw ArgumentError("ce_depth_loss: no valid pixels");
  return cross_entropy_depth(logits, lab.labels, lab.mask);
}

std::array<double, 3> depth_error_ratios(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                                         std::array<double, 3> thresholds) {
  if (!pred.same_shape(gt) || !mask.same_shape(gt)) throw ShapeError("depth_error_ratios: shape mismatch");
  std::array<std::int64_t, 3> over{};
  std::int64_t n = 0;
  for (std::int64_t p = 0; p < gt.numel(); ++p) {
    if (mask[p] == 0.0) continue;
    ++n;
    const double err = std::abs(pred[p] - gt[p]);
    for (std::size_t i = 0; i < 3; ++i) over[i] += err > thresholds[i] ? 1 : 0;
  }
  if (n == 0) throw ArgumentError("depth_error_ratios: empty mask");
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = static_cast<double>(over[i]) / static_cast<double>(n);
  return out;
}

std::pair<Tensor, Tensor> sample_depth_map(const Tensor& depth, const Tensor& mask, double scale, std::int64_t height,
                                           std::int64_t width) {
  if (depth.rank() != 2 || !mask.same_shape(depth)) throw ShapeError("sample_depth_map: expected [H,W] maps");
  Tensor out({height, width}), out_mask({height, width});
  const std::int64_t h = depth.dim(0), w = depth.dim(1);
  for (std::int64_t y = 0; y < height; ++y) {
    const auto sy = static_cast<std::int64_t>(std::llround(static_cast<double>(y) / scale));
    for (std::int64_t x = 0; x < width; ++x) {
      const auto sx = static_cast<std::int64_t>(std::llround(static_cast<double>(x) / scale));
      if (sy >= h || sx >= w || mask[sy * w + sx] == 0.0) continue;
      out[y * width + x] = depth[sy * w + sx];
      out_mask[y * width + x] = 1.0;
    }
  }
  return {std::move(out), std::move(out_mask)};
}

Tensor upsample_depth(const Tensor& depth, double factor, std::int64_t height, std::int64_t width,
                      UpsampleMode mode) {
  if (depth.rank() != 2) throw ShapeError("upsample_depth: expected [H,W]");
  const std::int64_t h = depth.dim(0), w = depth.dim(1);
  Tensor out({height, width});
  for (std::int64_t y = 0; y < height; ++y) {
    const double fy = std::min(static_cast<double>(y) / factor, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < width; ++x) {
      const double fx = std::min(static_cast<double>(x) / factor, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - static_cast<double>(x0);
      if (mode == UpsampleMode::kNearest) {
        out[y * width + x] = depth[std::llround(fy) * w + std::llround(fx)];
        continue;
      }
      // Interpolate in inverse depth, matching the hypothesis spacing.
      const double inv = (1 - ay) * ((1 - ax) / depth[y0 * w + x0] + ax / depth[y0 * w + x1]) +
                         ay * ((1 - ax) / depth[y1 * w + x0] + ax / depth[y1 * w + x1]);
      out[y * width + x] = 1.0 / inv;
    }
  }
  return out;
}

}  // namespace deskmvs
