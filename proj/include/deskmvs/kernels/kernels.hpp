#pragma once

// Hot loops behind the differentiable operations. Every kernel here is
// OpenMP-parallel over a partition of its *output*, so results do not depend
// on the thread count. kernels::reference holds straightforward serial
// versions of the forward kernels; tests and bench/ compare the two.

#include <cstdint>

namespace deskmvs::kernels {

// Runtime knobs shared by all kernels.
void set_num_threads(int threads);
int num_threads();

// Row-major C[M,N] = alpha * op(A) * op(B) + beta * C.
// op(A) is [M,K]; with trans_a, A is stored as [K,M]. Same for B ([K,N]).
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

// out[r, :] = softmax(scale * in[r, :]) with max subtraction.
void softmax_rows(const double* in, double* out, std::int64_t rows, std::int64_t n, double scale);

// Softmax attention on [heads, n, dh] blocks. Writes out [heads, nq, dh] and
// the per-row log-sum-exp of the scaled logits (needed by the backward pass,
// which recomputes probabilities row by row instead of storing them).
void attention_forward(const double* q, const double* k, const double* v, double* out, double* lse,
                       std::int64_t heads, std::int64_t nq, std::int64_t nk, std::int64_t dh, double scale);
void attention_backward(const double* q, const double* k, const double* v, const double* out, const double* lse,
                        const double* grad_out, double* grad_q, double* grad_k, double* grad_v, std::int64_t heads,
                        std::int64_t nq, std::int64_t nk, std::int64_t dh, double scale);

// Kernelised (linear) attention with phi(x) = elu(x) + 1:
//   out_i = phi(q_i)^T (sum_j phi(k_j) v_j^T) / (phi(q_i) . sum_j phi(k_j) + eps)
void linear_attention_forward(const double* q, const double* k, const double* v, double* out, std::int64_t heads,
                              std::int64_t nq, std::int64_t nk, std::int64_t dh, double eps);
void linear_attention_backward(const double* q, const double* k, const double* v, const double* grad_out,
                               double* grad_q, double* grad_k, double* grad_v, std::int64_t heads, std::int64_t nq,
                               std::int64_t nk, std::int64_t dh, double eps);

// Bilinear sampling of src[C,H,W] at coords[2,Ho,Wo] (x then y, pixel units).
// Samples outside [0,W-1]x[0,H-1] give 0 and mask 0.
void bilinear_forward(const double* src, const double* coords, double* out, double* mask, std::int64_t channels,
                      std::int64_t h, std::int64_t w, std::int64_t ho, std::int64_t wo);
// Accumulates into grad_src / grad_coords (either may be null).
void bilinear_backward(const double* src, const double* coords, const double* grad_out, double* grad_src,
                       double* grad_coords, std::int64_t channels, std::int64_t h, std::int64_t w, std::int64_t ho,
                       std::int64_t wo);

// Group-wise correlation cost volume.
//   ref [C,H,W], srcs: `views` pointers to [C,H,W], coords: `views` pointers to
//   [D,2,H,W] sampling positions in each source feature map.
//   scores [G,D,H,W] = mask-weighted mean over views of (G/C) <ref^g, warp^g>
//   valid [D,H,W] = 1 where at least one view samples in bounds.
void cost_volume_forward(const double* ref, const double* const* srcs, const double* const* coords,
                         std::int64_t views, double* scores, double* valid, std::int64_t channels,
                         std::int64_t groups, std::int64_t depth, std::int64_t h, std::int64_t w);
// grad_ref may be null; grad_srcs entries may be null.
void cost_volume_backward(const double* ref, const double* const* srcs, const double* const* coords,
                          std::int64_t views, const double* grad_scores, double* grad_ref, double* const* grad_srcs,
                          std::int64_t channels, std::int64_t groups, std::int64_t depth, std::int64_t h,
                          std::int64_t w);

// Patch extraction for convolutions: col[(c,ky,kx), (oy,ox)].
void im2col_2d(const double* x, double* col, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
               std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo);
void col2im_2d(const double* col, double* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
               std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo);
// Stride-1 3D variant: col[(c,kz,ky,kx), (z,y,x)] with "same" padding.
void im2col_3d(const double* x, double* col, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w,
               std::int64_t k, std::int64_t pad);
void col2im_3d(const double* col, double* x, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w,
               std::int64_t k, std::int64_t pad);

namespace reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c);
void softmax_rows(const double* in, double* out, std::int64_t rows, std::int64_t n, double scale);
// Materialises the full score matrix per head.
void attention_forward(const double* q, const double* k, const double* v, double* out, std::int64_t heads,
                       std::int64_t nq, std::int64_t nk, std::int64_t dh, double scale);
// O(n^2) kernel attention: scores phi(q).phi(k) normalised per row.
void linear_attention_quadratic(const double* q, const double* k, const double* v, double* out,
                                std::int64_t heads, std::int64_t nq, std::int64_t nk, std::int64_t dh, double eps);
void bilinear_forward(const double* src, const double* coords, double* out, double* mask, std::int64_t channels,
                      std::int64_t h, std::int64_t w, std::int64_t ho, std::int64_t wo);
void cost_volume_forward(const double* ref, const double* const* srcs, const double* const* coords,
                         std::int64_t views, double* scores, double* valid, std::int64_t channels,
                         std::int64_t groups, std::int64_t depth, std::int64_t h, std::int64_t w);

}  // namespace reference

}  // namespace deskmvs::kernels
