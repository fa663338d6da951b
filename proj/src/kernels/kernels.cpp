#include "deskmvs/kernels/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace deskmvs::kernels {

namespace {

inline double phi(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }
inline double phi_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

void transpose_into(const double* src, double* dst, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

struct BilinearTap {
  std::int64_t x0, x1, y0, y1;
  double ax, ay;
};

// False when (x, y) lies outside the pixel-centre hull of a h x w grid.
inline bool bilinear_tap(double x, double y, std::int64_t h, std::int64_t w, BilinearTap& t) {
  if (!(x >= 0.0 && y >= 0.0 && x <= static_cast<double>(w - 1) && y <= static_cast<double>(h - 1))) return false;
  t.x0 = std::max<std::int64_t>(0, std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(x)), w - 2));
  t.y0 = std::max<std::int64_t>(0, std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(y)), h - 2));
  t.x1 = std::min<std::int64_t>(t.x0 + 1, w - 1);
  t.y1 = std::min<std::int64_t>(t.y0 + 1, h - 1);
  t.ax = x - static_cast<double>(t.x0);
  t.ay = y - static_cast<double>(t.y0);
  return true;
}

inline double bilinear_value(const double* plane, std::int64_t w, const BilinearTap& t) {
  const double top = (1.0 - t.ax) * plane[t.y0 * w + t.x0] + t.ax * plane[t.y0 * w + t.x1];
  const double bottom = (1.0 - t.ax) * plane[t.y1 * w + t.x0] + t.ax * plane[t.y1 * w + t.x1];
  return (1.0 - t.ay) * top + t.ay * bottom;
}

inline void bilinear_scatter(double* plane, std::int64_t w, const BilinearTap& t, double g) {
  plane[t.y0 * w + t.x0] += g * (1.0 - t.ay) * (1.0 - t.ax);
  plane[t.y0 * w + t.x1] += g * (1.0 - t.ay) * t.ax;
  plane[t.y1 * w + t.x0] += g * t.ay * (1.0 - t.ax);
  plane[t.y1 * w + t.x1] += g * t.ay * t.ax;
}

}  // namespace

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int num_threads() { return omp_get_max_threads(); }

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  std::vector<double> a_buf;
  std::vector<double> b_buf;
  const double* A = a;
  const double* B = b;
  if (trans_a) {
    a_buf.resize(static_cast<std::size_t>(m * k));
    transpose_into(a, a_buf.data(), k, m);
    A = a_buf.data();
  }
  if (trans_b) {
    b_buf.resize(static_cast<std::size_t>(k * n));
    transpose_into(b, b_buf.data(), n, k);
    B = b_buf.data();
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (beta == 0.0) {
      std::fill(ci, ci + n, 0.0);
    } else if (beta != 1.0) {
      for (std::int64_t j = 0; j < n; ++j) ci[j] *= beta;
    }
    const double* ai = A + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double s = alpha * ai[kk];
      if (s == 0.0) continue;
      const double* bk = B + kk * n;
#pragma omp simd
      for (std::int64_t j = 0; j < n; ++j) ci[j] += s * bk[j];
    }
  }
}

void softmax_rows(const double* in, double* out, std::int64_t rows, std::int64_t n, double scale) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = in + r * n;
    double* y = out + r * n;
    double m = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n; ++j) m = std::max(m, scale * x[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(scale * x[j] - m);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < n; ++j) y[j] *= inv;
  }
}

void attention_forward(const double* q, const double* k, const double* v, double* out, double* lse,
                       std::int64_t heads, std::int64_t nq, std::int64_t nk, std::int64_t dh, double scale) {
#pragma omp parallel
  {
    std::vector<double> s(static_cast<std::size_t>(nk));
#pragma omp for schedule(static)
    for (std::int64_t idx = 0; idx < heads * nq; ++idx) {
      const std::int64_t hd = idx / nq;
      const double* qi = q + idx * dh;
      const double* kh = k + hd * nk * dh;
      const double* vh = v + hd * nk * dh;
      double m = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < nk; ++j) {
        const double* kj = kh + j * dh;
        double dot = 0.0;
        for (std::int64_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
        s[j] = scale * dot;
        m = std::max(m, s[j]);
      }
      double l = 0.0;
      for (std::int64_t j = 0; j < nk; ++j) {
        s[j] = std::exp(s[j] - m);
        l += s[j];
      }
      double* oi = out + idx * dh;
      std::fill(oi, oi + dh, 0.0);
      const double inv = 1.0 / l;
      for (std::int64_t j = 0; j < nk; ++j) {
        const double p = s[j] * inv;
        const double* vj = vh + j * dh;
        for (std::int64_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
      }
      lse[idx] = m + std::log(l);
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* out, const double* lse,
                        const double* grad_out, double* grad_q, double* grad_k, double* grad_v, std::int64_t heads,
                        std::int64_t nq, std::int64_t nk, std::int64_t dh, double scale) {
#pragma omp parallel for schedule(static)
  for (std::int64_t hd = 0; hd < heads; ++hd) {
    const double* kh = k + hd * nk * dh;
    const double* vh = v + hd * nk * dh;
    double* gkh = grad_k + hd * nk * dh;
    double* gvh = grad_v + hd * nk * dh;
    for (std::int64_t i = 0; i < nq; ++i) {
      const std::int64_t idx = hd * nq + i;
      const double* qi = q + idx * dh;
      const double* oi = out + idx * dh;
      const double* gi = grad_out + idx * dh;
      double* gqi = grad_q + idx * dh;
      double di = 0.0;
      for (std::int64_t c = 0; c < dh; ++c) di += gi[c] * oi[c];
      for (std::int64_t j = 0; j < nk; ++j) {
        const double* kj = kh + j * dh;
        const double* vj = vh + j * dh;
        double dot = 0.0;
        double dp = 0.0;
        for (std::int64_t c = 0; c < dh; ++c) {
          dot += qi[c] * kj[c];
          dp += gi[c] * vj[c];
        }
        const double p = std::exp(scale * dot - lse[idx]);
        const double ds = scale * p * (dp - di);
        double* gkj = gkh + j * dh;
        double* gvj = gvh + j * dh;
        for (std::int64_t c = 0; c < dh; ++c) {
          gqi[c] += ds * kj[c];
          gkj[c] += ds * qi[c];
          gvj[c] += p * gi[c];
        }
      }
    }
  }
}

void linear_attention_forward(const double* q, const double* k, const double* v, double* out, std::int64_t heads,
                              std::int64_t nq, std::int64_t nk, std::int64_t dh, double eps) {
#pragma omp parallel for schedule(static)
  for (std::int64_t hd = 0; hd < heads; ++hd) {
    std::vector<double> kv(static_cast<std::size_t>(dh * dh), 0.0);
    std::vector<double> ksum(static_cast<std::size_t>(dh), 0.0);
    std::vector<double> fq(static_cast<std::size_t>(dh));
    const double* kh = k + hd * nk * dh;
    const double* vh = v + hd * nk * dh;
    for (std::int64_t j = 0; j < nk; ++j) {
      const double* kj = kh + j * dh;
      const double* vj = vh + j * dh;
      for (std::int64_t a = 0; a < dh; ++a) {
        const double f = phi(kj[a]);
        ksum[a] += f;
        double* row = kv.data() + a * dh;
        for (std::int64_t b = 0; b < dh; ++b) row[b] += f * vj[b];
      }
    }
    for (std::int64_t i = 0; i < nq; ++i) {
      const double* qi = q + (hd * nq + i) * dh;
      double* oi = out + (hd * nq + i) * dh;
      double den = eps;
      for (std::int64_t a = 0; a < dh; ++a) {
        fq[a] = phi(qi[a]);
        den += fq[a] * ksum[a];
      }
      std::fill(oi, oi + dh, 0.0);
      for (std::int64_t a = 0; a < dh; ++a) {
        const double* row = kv.data() + a * dh;
        for (std::int64_t b = 0; b < dh; ++b) oi[b] += fq[a] * row[b];
      }
      const double inv = 1.0 / den;
      for (std::int64_t b = 0; b < dh; ++b) oi[b] *= inv;
    }
  }
}

void linear_attention_backward(const double* q, const double* k, const double* v, const double* grad_out,
                               double* grad_q, double* grad_k, double* grad_v, std::int64_t heads, std::int64_t nq,
                               std::int64_t nk, std::int64_t dh, double eps) {
#pragma omp parallel for schedule(static)
  for (std::int64_t hd = 0; hd < heads; ++hd) {
    const std::size_t dd = static_cast<std::size_t>(dh * dh);
    std::vector<double> kv(dd, 0.0), dkv(dd, 0.0);
    std::vector<double> ksum(static_cast<std::size_t>(dh), 0.0), dksum(static_cast<std::size_t>(dh), 0.0);
    std::vector<double> fq(static_cast<std::size_t>(dh)), num(static_cast<std::size_t>(dh)),
        dnum(static_cast<std::size_t>(dh));
    const double* kh = k + hd * nk * dh;
    const double* vh = v + hd * nk * dh;
    for (std::int64_t j = 0; j < nk; ++j) {
      const double* kj = kh + j * dh;
      const double* vj = vh + j * dh;
      for (std::int64_t a = 0; a < dh; ++a) {
        const double f = phi(kj[a]);
        ksum[a] += f;
        for (std::int64_t b = 0; b < dh; ++b) kv[a * dh + b] += f * vj[b];
      }
    }
    for (std::int64_t i = 0; i < nq; ++i) {
      const std::int64_t idx = hd * nq + i;
      const double* qi = q + idx * dh;
      const double* gi = grad_out + idx * dh;
      double* gqi = grad_q + idx * dh;
      double den = eps;
      for (std::int64_t a = 0; a < dh; ++a) {
        fq[a] = phi(qi[a]);
        den += fq[a] * ksum[a];
      }
      std::fill(num.begin(), num.end(), 0.0);
      for (std::int64_t a = 0; a < dh; ++a) {
        for (std::int64_t b = 0; b < dh; ++b) num[b] += fq[a] * kv[a * dh + b];
      }
      // out = num / den
      double g_dot_out = 0.0;
      for (std::int64_t b = 0; b < dh; ++b) {
        dnum[b] = gi[b] / den;
        g_dot_out += gi[b] * num[b] / den;
      }
      const double dden = -g_dot_out / den;
      for (std::int64_t a = 0; a < dh; ++a) {
        double dfq = dden * ksum[a];
        for (std::int64_t b = 0; b < dh; ++b) {
          dfq += kv[a * dh + b] * dnum[b];
          dkv[a * dh + b] += fq[a] * dnum[b];
        }
        dksum[a] += dden * fq[a];
        gqi[a] += dfq * phi_grad(qi[a]);
      }
    }
    double* gkh = grad_k + hd * nk * dh;
    double* gvh = grad_v + hd * nk * dh;
    for (std::int64_t j = 0; j < nk; ++j) {
      const double* kj = kh + j * dh;
      const double* vj = vh + j * dh;
      double* gkj = gkh + j * dh;
      double* gvj = gvh + j * dh;
      for (std::int64_t a = 0; a < dh; ++a) {
        const double f = phi(kj[a]);
        double dfk = dksum[a];
        for (std::int64_t b = 0; b < dh; ++b) {
          dfk += dkv[a * dh + b] * vj[b];
          gvj[b] += dkv[a * dh + b] * f;
        }
        gkj[a] += dfk * phi_grad(kj[a]);
      }
    }
  }
}

void bilinear_forward(const double* src, const double* coords, double* out, double* mask, std::int64_t channels,
                      std::int64_t h, std::int64_t w, std::int64_t ho, std::int64_t wo) {
  const std::int64_t np = ho * wo;
  const std::int64_t plane = h * w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < np; ++p) {
    BilinearTap t{};
    const bool inside = bilinear_tap(coords[p], coords[np + p], h, w, t);
    if (mask) mask[p] = inside ? 1.0 : 0.0;
    for (std::int64_t c = 0; c < channels; ++c) {
      out[c * np + p] = inside ? bilinear_value(src + c * plane, w, t) : 0.0;
    }
  }
}

void bilinear_backward(const double* src, const double* coords, const double* grad_out, double* grad_src,
                       double* grad_coords, std::int64_t channels, std::int64_t h, std::int64_t w, std::int64_t ho,
                       std::int64_t wo) {
  const std::int64_t np = ho * wo;
  const std::int64_t plane = h * w;
  if (grad_src) {
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < channels; ++c) {
      for (std::int64_t p = 0; p < np; ++p) {
        BilinearTap t{};
        if (!bilinear_tap(coords[p], coords[np + p], h, w, t)) continue;
        bilinear_scatter(grad_src + c * plane, w, t, grad_out[c * np + p]);
      }
    }
  }
  if (grad_coords) {
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < np; ++p) {
      BilinearTap t{};
      if (!bilinear_tap(coords[p], coords[np + p], h, w, t)) continue;
      double gx = 0.0;
      double gy = 0.0;
      for (std::int64_t c = 0; c < channels; ++c) {
        const double* s = src + c * plane;
        const double g = grad_out[c * np + p];
        const double v00 = s[t.y0 * w + t.x0], v01 = s[t.y0 * w + t.x1];
        const double v10 = s[t.y1 * w + t.x0], v11 = s[t.y1 * w + t.x1];
        gx += g * ((1.0 - t.ay) * (v01 - v00) + t.ay * (v11 - v10));
        gy += g * ((1.0 - t.ax) * (v10 - v00) + t.ax * (v11 - v01));
      }
      grad_coords[p] += gx;
      grad_coords[np + p] += gy;
    }
  }
}

void cost_volume_forward(const double* ref, const double* const* srcs, const double* const* coords,
                         std::int64_t views, double* scores, double* valid, std::int64_t channels,
                         std::int64_t groups, std::int64_t depth, std::int64_t h, std::int64_t w) {
  const std::int64_t np = h * w;
  const std::int64_t cpg = channels / groups;
  const double norm = static_cast<double>(groups) / static_cast<double>(channels);
#pragma omp parallel
  {
    std::vector<double> acc(static_cast<std::size_t>(groups));
#pragma omp for schedule(static)
    for (std::int64_t kd = 0; kd < depth; ++kd) {
      for (std::int64_t p = 0; p < np; ++p) {
        std::fill(acc.begin(), acc.end(), 0.0);
        int count = 0;
        for (std::int64_t s = 0; s < views; ++s) {
          const double* cs = coords[s] + kd * 2 * np;
          BilinearTap t{};
          if (!bilinear_tap(cs[p], cs[np + p], h, w, t)) continue;
          ++count;
          for (std::int64_t g = 0; g < groups; ++g) {
            double dot = 0.0;
            for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c) {
              dot += ref[c * np + p] * bilinear_value(srcs[s] + c * np, w, t);
            }
            acc[g] += dot;
          }
        }
        valid[kd * np + p] = count > 0 ? 1.0 : 0.0;
        const double scale = count > 0 ? norm / count : 0.0;
        for (std::int64_t g = 0; g < groups; ++g) scores[(g * depth + kd) * np + p] = acc[g] * scale;
      }
    }
  }
}

void cost_volume_backward(const double* ref, const double* const* srcs, const double* const* coords,
                          std::int64_t views, const double* grad_scores, double* grad_ref, double* const* grad_srcs,
                          std::int64_t channels, std::int64_t groups, std::int64_t depth, std::int64_t h,
                          std::int64_t w) {
  const std::int64_t np = h * w;
  const std::int64_t cpg = channels / groups;
  const double norm = static_cast<double>(groups) / static_cast<double>(channels);
  // Per (hypothesis, pixel) weight norm / #in-bounds views.
  std::vector<double> weight(static_cast<std::size_t>(depth * np), 0.0);
  for (std::int64_t kd = 0; kd < depth; ++kd) {
    for (std::int64_t p = 0; p < np; ++p) {
      int count = 0;
      for (std::int64_t s = 0; s < views; ++s) {
        const double* cs = coords[s] + kd * 2 * np;
        BilinearTap t{};
        if (bilinear_tap(cs[p], cs[np + p], h, w, t)) ++count;
      }
      weight[static_cast<std::size_t>(kd * np + p)] = count > 0 ? norm / count : 0.0;
    }
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < channels; ++c) {
    const std::int64_t g = c / cpg;
    for (std::int64_t kd = 0; kd < depth; ++kd) {
      const double* gs = grad_scores + (g * depth + kd) * np;
      for (std::int64_t s = 0; s < views; ++s) {
        const double* cs = coords[s] + kd * 2 * np;
        const double* src_plane = srcs[s] + c * np;
        double* gsrc_plane = grad_srcs[s] ? grad_srcs[s] + c * np : nullptr;
        for (std::int64_t p = 0; p < np; ++p) {
          const double wgt = weight[static_cast<std::size_t>(kd * np + p)];
          if (wgt == 0.0) continue;
          BilinearTap t{};
          if (!bilinear_tap(cs[p], cs[np + p], h, w, t)) continue;
          const double g_pix = gs[p] * wgt;
          if (grad_ref) grad_ref[c * np + p] += g_pix * bilinear_value(src_plane, w, t);
          if (gsrc_plane) bilinear_scatter(gsrc_plane, w, t, g_pix * ref[c * np + p]);
        }
      }
    }
  }
}

void im2col_2d(const double* x, double* col, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
               std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo) {
  const std::int64_t rows = c * k * k;
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t kx = r % k;
    const std::int64_t ky = (r / k) % k;
    const std::int64_t ch = r / (k * k);
    double* out = col + r * ho * wo;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      const std::int64_t iy = oy * stride - pad + ky;
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        const std::int64_t ix = ox * stride - pad + kx;
        out[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(ch * h + iy) * w + ix] : 0.0;
      }
    }
  }
}

void col2im_2d(const double* col, double* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
               std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo) {
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const double* in = col + ((ch * k + ky) * k + kx) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            x[(ch * h + iy) * w + ix] += in[oy * wo + ox];
          }
        }
      }
    }
  }
}

void im2col_3d(const double* x, double* col, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w,
               std::int64_t k, std::int64_t pad) {
  const std::int64_t rows = c * k * k * k;
  const std::int64_t nvox = d * h * w;
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t kx = r % k;
    const std::int64_t ky = (r / k) % k;
    const std::int64_t kz = (r / (k * k)) % k;
    const std::int64_t ch = r / (k * k * k);
    double* out = col + r * nvox;
    for (std::int64_t z = 0; z < d; ++z) {
      const std::int64_t iz = z - pad + kz;
      for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t iy = y - pad + ky;
        for (std::int64_t xx = 0; xx < w; ++xx) {
          const std::int64_t ix = xx - pad + kx;
          const bool inside = iz >= 0 && iz < d && iy >= 0 && iy < h && ix >= 0 && ix < w;
          out[(z * h + y) * w + xx] = inside ? x[((ch * d + iz) * h + iy) * w + ix] : 0.0;
        }
      }
    }
  }
}

void col2im_3d(const double* col, double* x, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w,
               std::int64_t k, std::int64_t pad) {
  const std::int64_t nvox = d * h * w;
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t kz = 0; kz < k; ++kz) {
      for (std::int64_t ky = 0; ky < k; ++ky) {
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const double* in = col + (((ch * k + kz) * k + ky) * k + kx) * nvox;
          for (std::int64_t z = 0; z < d; ++z) {
            const std::int64_t iz = z - pad + kz;
            if (iz < 0 || iz >= d) continue;
            for (std::int64_t y = 0; y < h; ++y) {
              const std::int64_t iy = y - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (std::int64_t xx = 0; xx < w; ++xx) {
                const std::int64_t ix = xx - pad + kx;
                if (ix < 0 || ix >= w) continue;
                x[((ch * d + iz) * h + iy) * w + ix] += in[(z * h + y) * w + xx];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace deskmvs::kernels
