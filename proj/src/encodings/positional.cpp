#include "deskmvs/encodings/positional.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "deskmvs/numerics/ops.hpp"

namespace deskmvs {

Tensor sinusoid_1d(std::span<const double> positions, std::int64_t channels, double base) {
  if (channels < 2 || channels % 2 != 0) {
    throw ArgumentError("sinusoid_1d: channel count must be even and positive, got " + std::to_string(channels));
  }
  const auto n = static_cast<std::int64_t>(positions.size());
  Tensor out({n, channels});
  std::vector<double> inv_freq(static_cast<std::size_t>(channels / 2));
  for (std::int64_t i = 0; i < channels / 2; ++i) {
    inv_freq[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(channels));
  }
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t i = 0; i < channels / 2; ++i) {
      const double a = positions[r] * inv_freq[i];
      out[r * channels + 2 * i] = std::sin(a);
      out[r * channels + 2 * i + 1] = std::cos(a);
    }
  }
  return out;
}

namespace {

std::vector<double> stretched_axis(std::int64_t n) {
  std::vector<double> pos(static_cast<std::size_t>(n), 0.0);
  if (n > 1) {
    for (std::int64_t i = 0; i < n; ++i) pos[i] = static_cast<double>(i) * kPeRange / static_cast<double>(n - 1);
  }
  return pos;
}

}  // namespace

Tensor normalized_pe_2d(std::int64_t height, std::int64_t width, std::int64_t channels) {
  if (height < 1 || width < 1) throw ShapeError("normalized_pe_2d: empty grid");
  if (channels < 4 || channels % 4 != 0) {
    throw ArgumentError("normalized_pe_2d: channels must be a positive multiple of 4, got " + std::to_string(channels));
  }
  const std::int64_t half = channels / 2;
  const Tensor rows = sinusoid_1d(stretched_axis(height), half);
  const Tensor cols = sinusoid_1d(stretched_axis(width), half);
  Tensor out({channels, height, width});
  for (std::int64_t c = 0; c < half; ++c) {
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        out[(c * height + y) * width + x] = rows[y * half + c];
        out[((half + c) * height + y) * width + x] = cols[x * half + c];
      }
    }
  }
  return out;
}

Tensor fpe_features(const Camera& ref, const FrustumGrid& grid, std::int64_t channels) {
  const Tensor uvz = frustum_normalize(ref, grid);
  const std::int64_t n = uvz.dim(1);
  Tensor out({n, 3 * channels});
  std::vector<double> pos(static_cast<std::size_t>(n));
  for (std::int64_t axis = 0; axis < 3; ++axis) {
    for (std::int64_t i = 0; i < n; ++i) pos[i] = uvz[axis * n + i] * kPeRange;
    const Tensor enc = sinusoid_1d(pos, channels);
    for (std::int64_t i = 0; i < n; ++i) {
      std::copy_n(enc.data() + i * channels, channels, out.data() + i * 3 * channels + axis * channels);
    }
  }
  return out;
}

Var fpe_3d(Tape& tape, const Camera& ref, const FrustumGrid& grid, Var proj) {
  const auto& pv = proj.value();
  if (pv.rank() != 2 || pv.dim(0) != 3 * pv.dim(1)) {
    throw ShapeError("fpe_3d: projection must be [3C, C], got " + shape_string(pv.shape()));
  }
  return matmul(tape.constant(fpe_features(ref, grid, pv.dim(1))), proj);
}

}  // namespace deskmvs
