#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kLinearAttentionEps = 1e-6;

// ---- elementwise / affine -------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// bias has the extent of x's trailing axis and is broadcast over the rest.
Var add_bias(Var x, Var bias);
Var mul_channel(Var x, Var gamma);

// ---- linear algebra / layout ---------------------------------------------

Var matmul(Var a, Var b);
// x[n, din] * w[din, dout] + b[dout]
Var linear(Var x, Var w, Var b);
Var transpose(Var x);
Var reshape(Var x, Shape shape);
Var concat(std::span<const Var> parts, int axis);
// [n, heads*dh] <-> [heads, n, dh]
Var split_heads(Var x, std::int64_t heads);
Var merge_heads(Var x);

// ---- nonlinearities --------------------------------------------------------

// Softmax of scale*logits over the trailing axis (max-subtracted).
Var softmax_scaled(Var logits, double scale);
Tensor softmax_scaled(const Tensor& logits, double scale);

// Normalises each trailing-axis slice, then applies gamma/beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);
// Affine-free variant on plain tensors (used on frozen features).
Tensor normalize_rows(const Tensor& x, double eps = kLayerNormEps);

// Exact GELU: x * Phi(x).
Var gelu(Var x);
// phi(x) = elu(x) + 1, strictly positive.
Var elu_feature_map(Var x);
Tensor elu_feature_map(const Tensor& x);

// ---- reductions -------------------------------------------------------------

Var sum(Var x);
Var mean(Var x);
// sum(x * w) for a constant w of the same size; the usual probe in gradient checks.
Var weighted_sum(Var x, const Tensor& w);

// ---- sampling / spatial -----------------------------------------------------

struct Sampled {
  Var values;   // [C, Ho, Wo]
  Tensor mask;  // [Ho, Wo], 1 where in bounds
};
// src [C,H,W]; coords [2,Ho,Wo] = (x, y) in pixel units of src.
Sampled bilinear_sample(Var src, Var coords);
std::pair<Tensor, Tensor> bilinear_sample(const Tensor& src, const Tensor& coords);

struct PatchStride {
  std::int64_t d = 2, h = 4, w = 4;
  std::int64_t volume() const { return d * h * w; }
};

// Non-overlapping 3D patch embedding: x[G,D,H,W] -> [Cout, D/sd, H/sh, W/sw].
// weight [Cout, G*sd*sh*sw], bias [Cout]. Each output cell is an affine map of
// exactly one input block.
Var patchify3d(Var x, Var weight, Var bias, PatchStride stride = {});
// Non-overlapping transposed conv: x[Cin,D',H',W'] -> [Cout, sd*D', sh*H', sw*W'].
// weight [Cin, Cout*sd*sh*sw], bias [Cout].
Var unpatchify3d(Var x, Var weight, Var bias, std::int64_t out_channels, PatchStride stride = {});

// x[Cin,H,W], w[Cout,Cin,k,k], b[Cout].
Var conv2d(Var x, Var w, Var b, std::int64_t stride, std::int64_t pad);
// x[Cin,D,H,W], w[Cout,Cin,k,k,k], b[Cout]; stride 1, "same" padding (k odd).
Var conv3d(Var x, Var w, Var b);
// [C,H,W] -> [C, f*H, f*W]
Var upsample_nearest(Var x, std::int64_t factor);

// ---- attention ----------------------------------------------------------------

// q[h,nq,dh], k/v[h,nk,dh]; softmax(scale * q k^T) v without storing the score
// matrix.
Var attention_softmax(Var q, Var k, Var v, double scale);
// Linear attention with phi = elu + 1 and the given denominator eps.
Var attention_linear(Var q, Var k, Var v, double eps = kLinearAttentionEps);

// ---- cost volume / losses ------------------------------------------------------

struct CorrelationVolume {
  Var scores;    // [G, D, H, W]
  Tensor valid;  // [D, H, W]
};
// coords[s] is [D, 2, H, W]: where hypothesis d of reference pixel p lands in
// source view s.
CorrelationVolume group_correlation(Var ref, std::span<const Var> srcs, std::span<const Tensor> coords,
                                    std::int64_t groups);

// Mean over mask==1 pixels of -log softmax(logits[:,p])[label[p]].
// logits [D,H,W]; labels/mask [H,W]. Throws if no pixel is valid.
Var cross_entropy_depth(Var logits, const std::vector<int>& labels, const Tensor& mask);

}  // namespace deskmvs
