// Serial reference kernels. Deliberately plain: these are what the parallel
// kernels are tested against, so they favour the obvious loop order.

#include <algorithm>
#include <cmath>
#include <vector>

#include "deskmvs/kernels/kernels.hpp"

namespace deskmvs::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = trans_a ? a[kk * m + i] : a[i * k + kk];
        const double bv = trans_b ? b[j * k + kk] : b[kk * n + j];
        acc += av * bv;
      }
      c[i * n + j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * c[i * n + j]);
    }
  }
}

void softmax_rows(const double* in, double* out, std::int64_t rows, std::int64_t n, double scale) {
  for (std::int64_t r = 0; r < rows; ++r) {
    double m = scale * in[r * n];
    for (std::int64_t j = 1; j < n; ++j) m = std::max(m, scale * in[r * n + j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) sum += std::exp(scale * in[r * n + j] - m);
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] = std::exp(scale * in[r * n + j] - m) / sum;
  }
}

void attention_forward(const double* q, const double* k, const double* v, double* out, std::int64_t heads,
                       std::int64_t nq, std::int64_t nk, std::int64_t dh, double scale) {
  std::vector<double> s(static_cast<std::size_t>(nq * nk));
  std::vector<double> p(s.size());
  for (std::int64_t hd = 0; hd < heads; ++hd) {
    const double* qh = q + hd * nq * dh;
    const double* kh = k + hd * nk * dh;
    const double* vh = v + hd * nk * dh;
    // S = Q K^T
    gemm(false, true, nq, nk, dh, 1.0, qh, kh, 0.0, s.data());
    softmax_rows(s.data(), p.data(), nq, nk, scale);
    gemm(false, false, nq, dh, nk, 1.0, p.data(), vh, 0.0, out + hd * nq * dh);
  }
}

void linear_attention_quadratic(const double* q, const double* k, const double* v, double* out,
                                std::int64_t heads, std::int64_t nq, std::int64_t nk, std::int64_t dh, double eps) {
  auto phi = [](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); };
  for (std::int64_t hd = 0; hd < heads; ++hd) {
    for (std::int64_t i = 0; i < nq; ++i) {
      const double* qi = q + (hd * nq + i) * dh;
      double* oi = out + (hd * nq + i) * dh;
      std::fill(oi, oi + dh, 0.0);
      double den = 0.0;
      for (std::int64_t j = 0; j < nk; ++j) {
        const double* kj = k + (hd * nk + j) * dh;
        const double* vj = v + (hd * nk + j) * dh;
        double sim = 0.0;
        for (std::int64_t c = 0; c < dh; ++c) sim += phi(qi[c]) * phi(kj[c]);
        den += sim;
        for (std::int64_t c = 0; c < dh; ++c) oi[c] += sim * vj[c];
      }
      for (std::int64_t c = 0; c < dh; ++c) oi[c] /= (den + eps);
    }
  }
}

void bilinear_forward(const double* src, const double* coords, double* out, double* mask, std::int64_t channels,
                      std::int64_t h, std::int64_t w, std::int64_t ho, std::int64_t wo) {
  const std::int64_t np = ho * wo;
  auto pixel = [&](std::int64_t c, std::int64_t y, std::int64_t x) {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return src[(c * h + y) * w + x];
  };
  for (std::int64_t p = 0; p < np; ++p) {
    const double x = coords[p];
    const double y = coords[np + p];
    const bool inside = x >= 0.0 && y >= 0.0 && x <= static_cast<double>(w - 1) && y <= static_cast<double>(h - 1);
    if (mask) mask[p] = inside ? 1.0 : 0.0;
    const auto x0 = static_cast<std::int64_t>(std::floor(x));
    const auto y0 = static_cast<std::int64_t>(std::floor(y));
    const double ax = x - static_cast<double>(x0);
    const double ay = y - static_cast<double>(y0);
    for (std::int64_t c = 0; c < channels; ++c) {
      if (!inside) {
        out[c * np + p] = 0.0;
        continue;
      }
      out[c * np + p] = (1 - ax) * (1 - ay) * pixel(c, y0, x0) + ax * (1 - ay) * pixel(c, y0, x0 + 1) +
                        (1 - ax) * ay * pixel(c, y0 + 1, x0) + ax * ay * pixel(c, y0 + 1, x0 + 1);
    }
  }
}

void cost_volume_forward(const double* ref, const double* const* srcs, const double* const* coords,
                         std::int64_t views, double* scores, double* valid, std::int64_t channels,
                         std::int64_t groups, std::int64_t depth, std::int64_t h, std::int64_t w) {
  const std::int64_t np = h * w;
  const std::int64_t cpg = channels / groups;
  std::vector<double> warped(static_cast<std::size_t>(channels * np));
  std::vector<double> mask(static_cast<std::size_t>(np));
  std::vector<double> count(static_cast<std::size_t>(depth * np), 0.0);
  std::fill(scores, scores + groups * depth * np, 0.0);
  for (std::int64_t s = 0; s < views; ++s) {
    for (std::int64_t kd = 0; kd < depth; ++kd) {
      bilinear_forward(srcs[s], coords[s] + kd * 2 * np, warped.data(), mask.data(), channels, h, w, h, w);
      for (std::int64_t p = 0; p < np; ++p) {
        if (mask[p] == 0.0) continue;
        count[kd * np + p] += 1.0;
        for (std::int64_t g = 0; g < groups; ++g) {
          double dot = 0.0;
          for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c) dot += ref[c * np + p] * warped[c * np + p];
          scores[(g * depth + kd) * np + p] += dot / static_cast<double>(cpg);
        }
      }
    }
  }
  for (std::int64_t kd = 0; kd < depth; ++kd) {
    for (std::int64_t p = 0; p < np; ++p) {
      const double n = count[kd * np + p];
      valid[kd * np + p] = n > 0.0 ? 1.0 : 0.0;
      for (std::int64_t g = 0; g < groups; ++g) {
        if (n > 0.0) scores[(g * depth + kd) * np + p] /= n;
      }
    }
  }
}

}  // namespace deskmvs::kernels::reference
