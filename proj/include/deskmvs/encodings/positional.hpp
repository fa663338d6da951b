#pragma once

#include <span>

#include "deskmvs/geometry/camera.hpp"
#include "deskmvs/geometry/warp.hpp"
#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

inline constexpr double kSinusoidBase = 10000.0;
// Normalised coordinates are stretched to [0, kPeRange] before encoding.
inline constexpr double kPeRange = 128.0;

// [n, channels]: column 2i = sin(pos / base^(2i/channels)), 2i+1 = cos(...).
Tensor sinusoid_1d(std::span<const double> positions, std::int64_t channels, double base = kSinusoidBase);

// [C, H, W]. Row y sits at y*128/(H-1), column x at x*128/(W-1); the first C/2
// channels encode the row, the rest the column. C must be a multiple of 4.
Tensor normalized_pe_2d(std::int64_t height, std::int64_t width, std::int64_t channels);

// Unprojected frustum encoding, token-major [cells, 3C]: sinusoids of u, v, z
// (each scaled to [0, 128]) concatenated in that order.
Tensor fpe_features(const Camera& ref, const FrustumGrid& grid, std::int64_t channels);

// Projected encoding [cells, C] = fpe_features * proj, proj [3C, C], no bias.
Var fpe_3d(Tape& tape, const Camera& ref, const FrustumGrid& grid, Var proj);

}  // namespace deskmvs
