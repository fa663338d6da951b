#include "deskmvs/geometry/hypotheses.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace deskmvs {

namespace {

void check_range(double d_near, double d_far, int count) {
  if (count < 2) throw ArgumentError("depth hypotheses: need at least 2, got " + std::to_string(count));
  if (!(d_near > 0.0 && d_near < d_far)) throw ArgumentError("depth hypotheses: need 0 < d_near < d_far");
}

// Inverse-depth window [lo, hi] for a refinement around `center`.
std::pair<double, double> window(double d_near, double d_far, double center, double span) {
  if (!(span >= 0.0)) throw ArgumentError("depth hypotheses: negative window");
  if (!(center >= d_near && center <= d_far)) {
    throw ArgumentError("depth hypotheses: center " + std::to_string(center) + " outside the scene range");
  }
  const double inv_min = 1.0 / d_far, inv_max = 1.0 / d_near;
  if (span >= inv_max - inv_min) return {inv_min, inv_max};
  double lo = 1.0 / center - 0.5 * span;
  double hi = 1.0 / center + 0.5 * span;
  if (lo < inv_min) {
    hi += inv_min - lo;
    lo = inv_min;
  } else if (hi > inv_max) {
    lo -= hi - inv_max;
    hi = inv_max;
  }
  return {lo, hi};
}

void fill_inverse(double lo, double hi, int count, double* out, std::int64_t stride) {
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (int k = 0; k < count; ++k) {
    // Endpoints exact so the outermost hypotheses hit the range bounds.
    const double inv = k == 0 ? hi : (k == count - 1 ? lo : hi - step * k);
    out[k * stride] = 1.0 / inv;
  }
}

}  // namespace

double DepthHypotheses::inverse_step() const {
  if (values.size() < 2) return 0.0;
  return (1.0 / values.front() - 1.0 / values.back()) / static_cast<double>(values.size() - 1);
}

DepthHypotheses inverse_depth_hypotheses(double d_near, double d_far, int count, std::optional<double> center,
                                         std::optional<double> inverse_span, int stage) {
  check_range(d_near, d_far, count);
  if (center.has_value() != inverse_span.has_value()) {
    throw ArgumentError("depth hypotheses: center and window come together");
  }
  double lo = 1.0 / d_far, hi = 1.0 / d_near;
  if (center) std::tie(lo, hi) = window(d_near, d_far, *center, *inverse_span);
  DepthHypotheses h;
  h.stage = stage;
  h.values.resize(static_cast<std::size_t>(count));
  if (center && hi == lo) {
    std::fill(h.values.begin(), h.values.end(), *center);
  } else {
    fill_inverse(lo, hi, count, h.values.data(), 1);
  }
  return h;
}

Tensor refine_hypotheses(const Tensor& prev_depth, double d_near, double d_far, int count, double inverse_span) {
  check_range(d_near, d_far, count);
  if (prev_depth.rank() != 2) throw ShapeError("refine_hypotheses: previous depth must be [H,W]");
  const std::int64_t np = prev_depth.numel();
  Tensor out({count, prev_depth.dim(0), prev_depth.dim(1)});
  for (std::int64_t p = 0; p < np; ++p) {
    const double c = std::clamp(prev_depth[p], d_near, d_far);
    const auto [lo, hi] = window(d_near, d_far, c, inverse_span);
    if (hi == lo) {
      for (int k = 0; k < count; ++k) out[k * np + p] = c;
    } else {
      fill_inverse(lo, hi, count, out.data() + p, np);
    }
  }
  return out;
}

Tensor hypothesis_volume(const DepthHypotheses& hyps, std::int64_t h, std::int64_t w) {
  const auto d = static_cast<std::int64_t>(hyps.size());
  Tensor out({d, h, w});
  for (std::int64_t k = 0; k < d; ++k) std::fill_n(out.data() + k * h * w, h * w, hyps.values[k]);
  return out;
}

int nearest_inverse_bin(const double* column, std::int64_t count, std::int64_t stride, double depth) {
  const double target = 1.0 / depth;
  int best = 0;
  double best_err = std::abs(1.0 / column[0] - target);
  for (std::int64_t k = 1; k < count; ++k) {
    const double err = std::abs(1.0 / column[k * stride] - target);
    if (err < best_err) {
      best_err = err;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace deskmvs
