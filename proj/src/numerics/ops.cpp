#include "deskmvs/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "deskmvs/kernels/kernels.hpp"

namespace deskmvs {

namespace kn = kernels;

namespace {

void same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
}

std::int64_t trailing(const Tensor& t, const char* op) {
  if (t.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1");
  return t.dim(-1);
}

// Accumulates g into the gradient of v only if v needs it.
Tensor* grad_if(Tape& tape, Var v) { return tape.requires_grad(v) ? &tape.grad_buffer(v) : nullptr; }

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

// ---- elementwise --------------------------------------------------------------

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(a, g);
    if (auto* gb = grad_if(t, b)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (auto* ga = grad_if(t, a)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (auto* gb = grad_if(t, b)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  out *= s;
  return a.tape().record("scale", std::move(out), {a}, [a, s](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* ga = grad_if(t, a)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  same_tape(x, bias, "add_bias");
  const std::int64_t d = trailing(x.value(), "add_bias");
  if (bias.value().numel() != d) throw ShapeError("add_bias: bias size does not match trailing axis");
  Tensor out = x.value();
  const auto& bv = bias.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i % d];
  return x.tape().record("add_bias", std::move(out), {x, bias}, [x, bias, d](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(x, g);
    if (auto* gb = grad_if(t, bias)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gb)[i % d] += g[i];
    }
  });
}

Var mul_channel(Var x, Var gamma) {
  same_tape(x, gamma, "mul_channel");
  const std::int64_t d = trailing(x.value(), "mul_channel");
  if (gamma.value().numel() != d) throw ShapeError("mul_channel: scale size does not match trailing axis");
  Tensor out = x.value();
  const auto& gv = gamma.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= gv[i % d];
  return x.tape().record("mul_channel", std::move(out), {x, gamma}, [x, gamma, d](Tape& t, const Tensor& g, const Tensor&) {
    const auto& xv = t.value(x);
    const auto& gv = t.value(gamma);
    if (auto* gx = grad_if(t, x)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * gv[i % d];
    }
    if (auto* gg = grad_if(t, gamma)) {
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gg)[i % d] += g[i] * xv[i];
    }
  });
}

// ---- linear algebra -----------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kn::gemm(false, false, m, n, k, 1.0, av.data(), bv.data(), 0.0, out.data());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b, m, n, k](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* ga = grad_if(t, a)) kn::gemm(false, true, m, k, n, 1.0, g.data(), t.value(b).data(), 1.0, ga->data());
    if (auto* gb = grad_if(t, b)) kn::gemm(true, false, k, n, m, 1.0, t.value(a).data(), g.data(), 1.0, gb->data());
  });
}

Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

Var transpose(Var x) {
  const auto& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("transpose: needs rank 2, got " + shape_string(xv.shape()));
  const std::int64_t r = xv.dim(0), c = xv.dim(1);
  Tensor out({c, r});
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  }
  return x.tape().record("transpose", std::move(out), {x}, [x, r, c](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* gx = grad_if(t, x)) {
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[j * r + i];
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshape(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor&) { t.accumulate(x, g); });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts[0].value();
  const int rank = first.rank();
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw ShapeError("concat: bad axis");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= first.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= first.dim(i);
  Shape shape = first.shape();
  shape[static_cast<std::size_t>(ax)] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat");
    const auto& v = p.value();
    if (v.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != ax && v.dim(i) != first.dim(i)) throw ShapeError("concat: extent mismatch off the concat axis");
    }
    extents.push_back(v.dim(ax));
    shape[static_cast<std::size_t>(ax)] += v.dim(ax);
  }
  const std::int64_t total = shape[static_cast<std::size_t>(ax)];
  Tensor out(shape);
  std::int64_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].value();
    const std::int64_t e = extents[pi];
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * e * inner, e * inner, out.data() + (o * total + offset) * inner);
    }
    offset += e;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      "concat", std::move(out), parts, [inputs, extents, outer, inner, total](Tape& t, const Tensor& g, const Tensor&) {
        std::int64_t off = 0;
        for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
          const std::int64_t e = extents[pi];
          if (auto* gp = grad_if(t, inputs[pi])) {
            for (std::int64_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * total + off) * inner;
              double* dst = gp->data() + o * e * inner;
              for (std::int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
            }
          }
          off += e;
        }
      });
}

Var split_heads(Var x, std::int64_t heads) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || heads < 1 || xv.dim(1) % heads != 0) {
    throw ShapeError("split_heads: " + shape_string(xv.shape()) + " into " + std::to_string(heads) + " heads");
  }
  const std::int64_t n = xv.dim(0), d = xv.dim(1), dh = d / heads;
  Tensor out({heads, n, dh});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t h = 0; h < heads; ++h) {
      std::copy_n(xv.data() + i * d + h * dh, dh, out.data() + (h * n + i) * dh);
    }
  }
  return x.tape().record("split_heads", std::move(out), {x}, [x, n, d, dh, heads](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* gx = grad_if(t, x)) {
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t h = 0; h < heads; ++h) {
          const double* src = g.data() + (h * n + i) * dh;
          double* dst = gx->data() + i * d + h * dh;
          for (std::int64_t c = 0; c < dh; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

Var merge_heads(Var x) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("merge_heads: needs [heads, n, dh]");
  const std::int64_t heads = xv.dim(0), n = xv.dim(1), dh = xv.dim(2), d = heads * dh;
  Tensor out({n, d});
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t i = 0; i < n; ++i) {
      std::copy_n(xv.data() + (h * n + i) * dh, dh, out.data() + i * d + h * dh);
    }
  }
  return x.tape().record("merge_heads", std::move(out), {x}, [x, n, d, dh, heads](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* gx = grad_if(t, x)) {
      for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t i = 0; i < n; ++i) {
          const double* src = g.data() + i * d + h * dh;
          double* dst = gx->data() + (h * n + i) * dh;
          for (std::int64_t c = 0; c < dh; ++c) dst[c] += src[c];
        }
      }
    }
  });
}

// ---- nonlinearities -----------------------------------------------------------

Tensor softmax_scaled(const Tensor& logits, double s) {
  if (!(s > 0.0)) throw ArgumentError("softmax_scaled: scale must be > 0");
  const std::int64_t n = trailing(logits, "softmax_scaled");
  if (n < 1) throw ShapeError("softmax_scaled: empty trailing axis");
  require_finite(logits, "softmax_scaled input");
  Tensor out(logits.shape());
  kn::softmax_rows(logits.data(), out.data(), logits.numel() / n, n, s);
  return out;
}


Var softmax_scaled(Var logits, double s) {
  Tensor out = softmax_scaled(logits.value(), s);
  const std::int64_t n = out.dim(-1);
  return logits.tape().record("softmax_scaled", std::move(out), {logits},
                              [logits, s, n](Tape& t, const Tensor& g, const Tensor& y) {
                                auto* gx = grad_if(t, logits);
                                if (!gx) return;
                                const std::int64_t rows = y.numel() / n;
                                for (std::int64_t r = 0; r < rows; ++r) {
                                  const double* yr = y.data() + r * n;
                                  const double* gr = g.data() + r * n;
                                  double dot = 0.0;
                                  for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                                  double* out = gx->data() + r * n;
                                  for (std::int64_t j = 0; j < n; ++j) out[j] += s * yr[j] * (gr[j] - dot);
                                }
                              });
}

namespace {

struct Moments {
  double mean;
  double rstd;
};

Moments slice_moments(const double* x, std::int64_t d, double eps) {
  double mean = 0.0;
  for (std::int64_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::int64_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= static_cast<double>(d);
  return {mean, 1.0 / std::sqrt(var + eps)};
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::int64_t d = trailing(x, "layer_norm");
  if (d < 1) throw ShapeError("layer_norm: empty trailing axis");
  if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: gamma/beta size mismatch");
  Tensor out(x.shape());
  const std::int64_t rows = x.numel() / d;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    const Moments m = slice_moments(xr, d, eps);
    double* yr = out.data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) yr[j] = gamma[j] * (xr[j] - m.mean) * m.rstd + beta[j];
  }
  return out;
}

Tensor normalize_rows(const Tensor& x, double eps) {
  const std::int64_t d = trailing(x, "normalize_rows");
  return layer_norm(x, Tensor({d}, 1.0), Tensor({d}, 0.0), eps);
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_tape(x, gamma, "layer_norm");
  same_tape(x, beta, "layer_norm");
  Tensor out = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  const std::int64_t d = out.dim(-1);
  return x.tape().record(
      "layer_norm", std::move(out), {x, gamma, beta}, [x, gamma, beta, d, eps](Tape& t, const Tensor& g, const Tensor&) {
        const auto& xv = t.value(x);
        const auto& gv = t.value(gamma);
        auto* gx = grad_if(t, x);
        auto* gg = grad_if(t, gamma);
        auto* gb = grad_if(t, beta);
        const std::int64_t rows = xv.numel() / d;
        std::vector<double> xhat(static_cast<std::size_t>(d)), dxhat(static_cast<std::size_t>(d));
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* xr = xv.data() + r * d;
          const double* gr = g.data() + r * d;
          const Moments m = slice_moments(xr, d, eps);
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::int64_t j = 0; j < d; ++j) {
            xhat[j] = (xr[j] - m.mean) * m.rstd;
            dxhat[j] = gr[j] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
            if (gg) (*gg)[j] += gr[j] * xhat[j];
            if (gb) (*gb)[j] += gr[j];
          }
          if (!gx) continue;
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          double* out = gx->data() + r * d;
          for (std::int64_t j = 0; j < d; ++j) {
            out[j] += m.rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
          }
        }
      });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = gelu_value(v);
  return x.tape().record("gelu", std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* gx = grad_if(t, x)) {
      const auto& xv = t.value(x);
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * gelu_grad(xv[i]);
    }
  });
}

Tensor elu_feature_map(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.values()) v = v > 0.0 ? v + 1.0 : std::exp(v);
  return out;
}

Var elu_feature_map(Var x) {
  return x.tape().record("elu_feature_map", elu_feature_map(x.value()), {x},
                         [x](Tape& t, const Tensor& g, const Tensor&) {
                           if (auto* gx = grad_if(t, x)) {
                             const auto& xv = t.value(x);
                             for (std::int64_t i = 0; i < g.numel(); ++i) {
                               (*gx)[i] += g[i] * (xv[i] > 0.0 ? 1.0 : std::exp(xv[i]));
                             }
                           }
                         });
}

// ---- reductions -----------------------------------------------------------------

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* gx = grad_if(t, x)) {
      const double gv = g[0];
      for (auto& v : gx->values()) v += gv;
    }
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().numel());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var weighted_sum(Var x, const Tensor& w) {
  if (w.numel() != x.value().numel()) throw ShapeError("weighted_sum: weight size mismatch");
  double s = 0.0;
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < xv.numel(); ++i) s += xv[i] * w[i];
  return x.tape().record("weighted_sum", Tensor::scalar(s), {x}, [x, w](Tape& t, const Tensor& g, const Tensor&) {
    if (auto* gx = grad_if(t, x)) {
      for (std::int64_t i = 0; i < w.numel(); ++i) (*gx)[i] += g[0] * w[i];
    }
  });
}

// ---- sampling -------------------------------------------------------------------

namespace {

void check_sample_shapes(const Tensor& src, const Tensor& coords) {
  if (src.rank() != 3) throw ShapeError("bilinear_sample: src must be [C,H,W], got " + shape_string(src.shape()));
  if (coords.rank() != 3 || coords.dim(0) != 2) {
    throw ShapeError("bilinear_sample: coords must be [2,Ho,Wo], got " + shape_string(coords.shape()));
  }
}

}  // namespace

std::pair<Tensor, Tensor> bilinear_sample(const Tensor& src, const Tensor& coords) {
  check_sample_shapes(src, coords);
  require_finite(coords, "bilinear_sample coords");
  const std::int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2), ho = coords.dim(1), wo = coords.dim(2);
  Tensor out({c, ho, wo});
  Tensor mask({ho, wo});
  kn::bilinear_forward(src.data(), coords.data(), out.data(), mask.data(), c, h, w, ho, wo);
  return {std::move(out), std::move(mask)};
}

Sampled bilinear_sample(Var src, Var coords) {
  same_tape(src, coords, "bilinear_sample");
  auto [out, mask] = bilinear_sample(src.value(), coords.value());
  const std::int64_t c = src.dim(0), h = src.dim(1), w = src.dim(2), ho = coords.dim(1), wo = coords.dim(2);
  Var v = src.tape().record("bilinear_sample", std::move(out), {src, coords},
                            [src, coords, c, h, w, ho, wo](Tape& t, const Tensor& g, const Tensor&) {
                              auto* gs = grad_if(t, src);
                              auto* gc = grad_if(t, coords);
                              kn::bilinear_backward(t.value(src).data(), t.value(coords).data(), g.data(),
                                                    gs ? gs->data() : nullptr, gc ? gc->data() : nullptr, c, h, w,
                                                    ho, wo);
                            });
  return {v, std::move(mask)};
}

// ---- patch embedding ------------------------------------------------------------

namespace {

// Gathers x[G,D,H,W] into blocks[G*sd*sh*sw, n] (one column per output cell),
// or scatters back when `gather` is false (accumulating).
void patch_blocks(const Tensor& x_shape_ref, double* x, double* blocks, PatchStride st, bool gather) {
  const std::int64_t g = x_shape_ref.dim(0), d = x_shape_ref.dim(1), h = x_shape_ref.dim(2), w = x_shape_ref.dim(3);
  const std::int64_t dp = d / st.d, hp = h / st.h, wp = w / st.w;
  const std::int64_t n = dp * hp * wp;
  for (std::int64_t gi = 0; gi < g; ++gi) {
    for (std::int64_t dz = 0; dz < st.d; ++dz) {
      for (std::int64_t dy = 0; dy < st.h; ++dy) {
        for (std::int64_t dx = 0; dx < st.w; ++dx) {
          const std::int64_t row = ((gi * st.d + dz) * st.h + dy) * st.w + dx;
          double* brow = blocks + row * n;
          for (std::int64_t zd = 0; zd < dp; ++zd) {
            for (std::int64_t yh = 0; yh < hp; ++yh) {
              for (std::int64_t xw = 0; xw < wp; ++xw) {
                const std::int64_t cell = (zd * hp + yh) * wp + xw;
                const std::int64_t idx = ((gi * d + zd * st.d + dz) * h + yh * st.h + dy) * w + xw * st.w + dx;
                if (gather) {
                  brow[cell] = x[idx];
                } else {
                  x[idx] += brow[cell];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var patchify3d(Var x, Var weight, Var bias, PatchStride st) {
  same_tape(x, weight, "patchify3d");
  same_tape(x, bias, "patchify3d");
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("patchify3d: input must be [G,D,H,W], got " + shape_string(xv.shape()));
  const std::int64_t g = xv.dim(0), d = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (d % st.d != 0 || h % st.h != 0 || w % st.w != 0) {
    throw ShapeError("patchify3d: extents " + shape_string(xv.shape()) + " not divisible by the patch stride");
  }
  const std::int64_t k = g * st.volume();
  const auto& wv = weight.value();
  if (wv.rank() != 2 || wv.dim(1) != k) {
    throw ShapeError("patchify3d: weight must be [Cout, " + std::to_string(k) + "], got " + shape_string(wv.shape()));
  }
  const std::int64_t cout = wv.dim(0);
  if (bias.value().numel() != cout) throw ShapeError("patchify3d: bias size mismatch");
  const std::int64_t dp = d / st.d, hp = h / st.h, wp = w / st.w, n = dp * hp * wp;
  Tensor blocks({k, n});
  patch_blocks(xv, const_cast<double*>(xv.data()), blocks.data(), st, true);
  Tensor out({cout, dp, hp, wp});
  kn::gemm(false, false, cout, n, k, 1.0, wv.data(), blocks.data(), 0.0, out.data());
  const auto& bv = bias.value();
  for (std::int64_t o = 0; o < cout; ++o) {
    for (std::int64_t i = 0; i < n; ++i) out[o * n + i] += bv[o];
  }
  return x.tape().record(
      "patchify3d", std::move(out), {x, weight, bias},
      [x, weight, bias, st, cout, k, n](Tape& t, const Tensor& g, const Tensor&) {
        const auto& xv = t.value(x);
        if (auto* gb = grad_if(t, bias)) {
          for (std::int64_t o = 0; o < cout; ++o) {
            for (std::int64_t i = 0; i < n; ++i) (*gb)[o] += g[o * n + i];
          }
        }
        if (auto* gw = grad_if(t, weight)) {
          Tensor blocks({k, n});
          patch_blocks(xv, const_cast<double*>(xv.data()), blocks.data(), st, true);
          kn::gemm(false, true, cout, k, n, 1.0, g.data(), blocks.data(), 1.0, gw->data());
        }
        if (auto* gx = grad_if(t, x)) {
          Tensor dblocks({k, n});
          kn::gemm(true, false, k, n, cout, 1.0, t.value(weight).data(), g.data(), 0.0, dblocks.data());
          patch_blocks(xv, gx->data(), dblocks.data(), st, false);
        }
      });
}

Var unpatchify3d(Var x, Var weight, Var bias, std::int64_t out_channels, PatchStride st) {
  same_tape(x, weight, "unpatchify3d");
  same_tape(x, bias, "unpatchify3d");
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("unpatchify3d: input must be [Cin,D',H',W'], got " + shape_string(xv.shape()));
  const std::int64_t cin = xv.dim(0), dp = xv.dim(1), hp = xv.dim(2), wp = xv.dim(3), n = dp * hp * wp;
  const std::int64_t k = out_channels * st.volume();
  const auto& wv = weight.value();
  if (wv.rank() != 2 || wv.dim(0) != cin || wv.dim(1) != k) {
    throw ShapeError("unpatchify3d: weight must be [" + std::to_string(cin) + ", " + std::to_string(k) + "], got " +
                     shape_string(wv.shape()));
  }
  if (bias.value().numel() != out_channels) throw ShapeError("unpatchify3d: bias size mismatch");
  Tensor blocks({k, n});
  kn::gemm(true, false, k, n, cin, 1.0, wv.data(), xv.data(), 0.0, blocks.data());
  Tensor out({out_channels, dp * st.d, hp * st.h, wp * st.w});
  const auto& bv = bias.value();
  const std::int64_t per_channel = out.numel() / out_channels;
  for (std::int64_t o = 0; o < out_channels; ++o) {
    std::fill_n(out.data() + o * per_channel, per_channel, bv[o]);
  }
  patch_blocks(out, out.data(), blocks.data(), st, false);
  return x.tape().record(
      "unpatchify3d", std::move(out), {x, weight, bias},
      [x, weight, bias, st, out_channels, cin, k, n, per_channel](Tape& t, const Tensor& g, const Tensor&) {
        if (auto* gb = grad_if(t, bias)) {
          for (std::int64_t o = 0; o < out_channels; ++o) {
            for (std::int64_t i = 0; i < per_channel; ++i) (*gb)[o] += g[o * per_channel + i];
          }
        }
        Tensor gblocks({k, n});
        patch_blocks(g, const_cast<double*>(g.data()), gblocks.data(), st, true);
        if (auto* gw = grad_if(t, weight)) {
          kn::gemm(false, true, cin, k, n, 1.0, t.value(x).data(), gblocks.data(), 1.0, gw->data());
        }
        if (auto* gx = grad_if(t, x)) {
          kn::gemm(false, false, cin, n, k, 1.0, t.value(weight).data(), gblocks.data(), 1.0, gx->data());
        }
      });
}

// ---- convolutions ---------------------------------------------------------------

Var conv2d(Var x, Var w, Var b, std::int64_t stride, std::int64_t pad) {
  same_tape(x, w, "conv2d");
  same_tape(x, b, "conv2d");
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d: input " + shape_string(xv.shape()) + " weight " + shape_string(wv.shape()));
  }
  if (stride < 1 || pad < 0) throw ArgumentError("conv2d: bad stride/pad");
  const std::int64_t cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2), cout = wv.dim(0), k = wv.dim(2);
  const std::int64_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input");
  if (b.value().numel() != cout) throw ShapeError("conv2d: bias size mismatch");
  const std::int64_t kk = cin * k * k, np = ho * wo;
  Tensor col({kk, np});
  kn::im2col_2d(xv.data(), col.data(), cin, h, wd, k, stride, pad, ho, wo);
  Tensor out({cout, ho, wo});
  kn::gemm(false, false, cout, np, kk, 1.0, wv.data(), col.data(), 0.0, out.data());
  const auto& bv = b.value();
  for (std::int64_t o = 0; o < cout; ++o) {
    for (std::int64_t i = 0; i < np; ++i) out[o * np + i] += bv[o];
  }
  return x.tape().record("conv2d", std::move(out), {x, w, b},
                         [x, w, b, cin, h, wd, cout, k, stride, pad, ho, wo, kk, np](Tape& t, const Tensor& g,
                                                                                    const Tensor&) {
                           if (auto* gb = grad_if(t, b)) {
                             for (std::int64_t o = 0; o < cout; ++o) {
                               for (std::int64_t i = 0; i < np; ++i) (*gb)[o] += g[o * np + i];
                             }
                           }
                           auto* gw = grad_if(t, w);
                           auto* gx = grad_if(t, x);
                           if (gw) {
                             Tensor col({kk, np});
                             kn::im2col_2d(t.value(x).data(), col.data(), cin, h, wd, k, stride, pad, ho, wo);
                             kn::gemm(false, true, cout, kk, np, 1.0, g.data(), col.data(), 1.0, gw->data());
                           }
                           if (gx) {
                             Tensor dcol({kk, np});
                             kn::gemm(true, false, kk, np, cout, 1.0, t.value(w).data(), g.data(), 0.0, dcol.data());
                             kn::col2im_2d(dcol.data(), gx->data(), cin, h, wd, k, stride, pad, ho, wo);
                           }
                         });
}

Var conv3d(Var x, Var w, Var b) {
  same_tape(x, w, "conv3d");
  same_tape(x, b, "conv3d");
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 5 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3) ||
      wv.dim(3) != wv.dim(4) || wv.dim(2) % 2 == 0) {
    throw ShapeError("conv3d: input " + shape_string(xv.shape()) + " weight " + shape_string(wv.shape()));
  }
  const std::int64_t cin = xv.dim(0), d = xv.dim(1), h = xv.dim(2), wd = xv.dim(3), cout = wv.dim(0), k = wv.dim(2);
  const std::int64_t pad = k / 2, kk = cin * k * k * k, nv = d * h * wd;
  if (b.value().numel() != cout) throw ShapeError("conv3d: bias size mismatch");
  Tensor col({kk, nv});
  kn::im2col_3d(xv.data(), col.data(), cin, d, h, wd, k, pad);
  Tensor out({cout, d, h, wd});
  kn::gemm(false, false, cout, nv, kk, 1.0, wv.data(), col.data(), 0.0, out.data());
  const auto& bv = b.value();
  for (std::int64_t o = 0; o < cout; ++o) {
    for (std::int64_t i = 0; i < nv; ++i) out[o * nv + i] += bv[o];
  }
  return x.tape().record("conv3d", std::move(out), {x, w, b},
                         [x, w, b, cin, d, h, wd, cout, k, pad, kk, nv](Tape& t, const Tensor& g, const Tensor&) {
                           if (auto* gb = grad_if(t, b)) {
                             for (std::int64_t o = 0; o < cout; ++o) {
                               for (std::int64_t i = 0; i < nv; ++i) (*gb)[o] += g[o * nv + i];
                             }
                           }
                           auto* gw = grad_if(t, w);
                           auto* gx = grad_if(t, x);
                           if (gw) {
                             Tensor col({kk, nv});
                             kn::im2col_3d(t.value(x).data(), col.data(), cin, d, h, wd, k, pad);
                             kn::gemm(false, true, cout, kk, nv, 1.0, g.data(), col.data(), 1.0, gw->data());
                           }
                           if (gx) {
                             Tensor dcol({kk, nv});
                             kn::gemm(true, false, kk, nv, cout, 1.0, t.value(w).data(), g.data(), 0.0, dcol.data());
                             kn::col2im_3d(dcol.data(), gx->data(), cin, d, h, wd, k, pad);
                           }
                         });
}

Var upsample_nearest(Var x, std::int64_t f) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || f < 1) throw ShapeError("upsample_nearest: needs [C,H,W] and factor >= 1");
  const std::int64_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2), ho = h * f, wo = w * f;
  Tensor out({c, ho, wo});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < ho; ++y) {
      for (std::int64_t xx = 0; xx < wo; ++xx) out[(ch * ho + y) * wo + xx] = xv[(ch * h + y / f) * w + xx / f];
    }
  }
  return x.tape().record("upsample_nearest", std::move(out), {x},
                         [x, c, h, w, ho, wo, f](Tape& t, const Tensor& g, const Tensor&) {
                           if (auto* gx = grad_if(t, x)) {
                             for (std::int64_t ch = 0; ch < c; ++ch) {
                               for (std::int64_t y = 0; y < ho; ++y) {
                                 for (std::int64_t xx = 0; xx < wo; ++xx) {
                                   (*gx)[(ch * h + y / f) * w + xx / f] += g[(ch * ho + y) * wo + xx];
                                 }
                               }
                             }
                           }
                         });
}

// ---- attention --------------------------------------------------------------------

namespace {

struct HeadShapes {
  std::int64_t heads, nq, nk, dh;
};

HeadShapes attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v, const char* op) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) throw ShapeError(std::string(op) + ": q/k/v must be rank 3");
  if (q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) || k.dim(2) != v.dim(2) ||
      k.dim(1) != v.dim(1)) {
    throw ShapeError(std::string(op) + ": q " + shape_string(q.shape()) + " k " + shape_string(k.shape()) + " v " +
                     shape_string(v.shape()));
  }
  if (k.dim(1) < 1) throw ShapeError(std::string(op) + ": no keys");
  return {q.dim(0), q.dim(1), k.dim(1), q.dim(2)};
}

}  // namespace

Var attention_softmax(Var q, Var k, Var v, double s) {
  same_tape(q, k, "attention_softmax");
  same_tape(q, v, "attention_softmax");
  if (!(s > 0.0)) throw ArgumentError("attention_softmax: scale must be > 0");
  const HeadShapes hs = attention_shapes(q.value(), k.value(), v.value(), "attention_softmax");
  Tensor out({hs.heads, hs.nq, hs.dh});
  auto lse = std::make_shared<Tensor>(Shape{hs.heads, hs.nq});
  kn::attention_forward(q.value().data(), k.value().data(), v.value().data(), out.data(), lse->data(), hs.heads,
                        hs.nq, hs.nk, hs.dh, s);
  return q.tape().record("attention_softmax", std::move(out), {q, k, v},
                         [q, k, v, s, hs, lse](Tape& t, const Tensor& g, const Tensor& o) {
                           Tensor gq({hs.heads, hs.nq, hs.dh}), gk({hs.heads, hs.nk, hs.dh}),
                               gv({hs.heads, hs.nk, hs.dh});
                           kn::attention_backward(t.value(q).data(), t.value(k).data(), t.value(v).data(), o.data(),
                                                  lse->data(), g.data(), gq.data(), gk.data(), gv.data(), hs.heads,
                                                  hs.nq, hs.nk, hs.dh, s);
                           t.accumulate(q, gq);
                           t.accumulate(k, gk);
                           t.accumulate(v, gv);
                         });
}

Var attention_linear(Var q, Var k, Var v, double eps) {
  same_tape(q, k, "attention_linear");
  same_tape(q, v, "attention_linear");
  if (!(eps >= 0.0)) throw ArgumentError("attention_linear: eps must be >= 0");
  const HeadShapes hs = attention_shapes(q.value(), k.value(), v.value(), "attention_linear");
  Tensor out({hs.heads, hs.nq, hs.dh});
  kn::linear_attention_forward(q.value().data(), k.value().data(), v.value().data(), out.data(), hs.heads, hs.nq,
                               hs.nk, hs.dh, eps);
  return q.tape().record("attention_linear", std::move(out), {q, k, v},
                         [q, k, v, eps, hs](Tape& t, const Tensor& g, const Tensor&) {
                           Tensor gq({hs.heads, hs.nq, hs.dh}), gk({hs.heads, hs.nk, hs.dh}),
                               gv({hs.heads, hs.nk, hs.dh});
                           kn::linear_attention_backward(t.value(q).data(), t.value(k).data(), t.value(v).data(),
                                                         g.data(), gq.data(), gk.data(), gv.data(), hs.heads, hs.nq,
                                                         hs.nk, hs.dh, eps);
                           t.accumulate(q, gq);
                           t.accumulate(k, gk);
                           t.accumulate(v, gv);
                         });
}

// ---- cost volume / loss ------------------------------------------------------------

CorrelationVolume group_correlation(Var ref, std::span<const Var> srcs, std::span<const Tensor> coords,
                                    std::int64_t groups) {
  if (srcs.empty()) throw ArgumentError("group_correlation: no source views");
  if (srcs.size() != coords.size()) throw ShapeError("group_correlation: one coordinate set per source view");
  const auto& rv = ref.value();
  if (rv.rank() != 3) throw ShapeError("group_correlation: features must be [C,H,W]");
  const std::int64_t c = rv.dim(0), h = rv.dim(1), w = rv.dim(2);
  if (groups < 1 || c % groups != 0) {
    throw ShapeError("group_correlation: " + std::to_string(groups) + " groups do not divide " + std::to_string(c) +
                     " channels");
  }
  std::int64_t depth = -1;
  std::vector<const double*> src_ptrs, coord_ptrs;
  for (std::size_t s = 0; s < srcs.size(); ++s) {
    same_tape(ref, srcs[s], "group_correlation");
    if (!srcs[s].value().same_shape(rv)) throw ShapeError("group_correlation: source features differ in shape");
    const auto& cs = coords[s];
    if (cs.rank() != 4 || cs.dim(1) != 2 || cs.dim(2) != h || cs.dim(3) != w) {
      throw ShapeError("group_correlation: coords must be [D,2,H,W], got " + shape_string(cs.shape()));
    }
    if (depth < 0) depth = cs.dim(0);
    if (cs.dim(0) != depth) throw ShapeError("group_correlation: views disagree on hypothesis count");
    require_finite(cs, "group_correlation coords");
    src_ptrs.push_back(srcs[s].value().data());
    coord_ptrs.push_back(cs.data());
  }
  Tensor scores({groups, depth, h, w});
  Tensor valid({depth, h, w});
  const auto views = static_cast<std::int64_t>(srcs.size());
  kn::cost_volume_forward(rv.data(), src_ptrs.data(), coord_ptrs.data(), views, scores.data(), valid.data(), c,
                          groups, depth, h, w);
  std::vector<Var> inputs{ref};
  inputs.insert(inputs.end(), srcs.begin(), srcs.end());
  auto coords_copy = std::make_shared<std::vector<Tensor>>(coords.begin(), coords.end());
  Var out = ref.tape().record(
      "group_correlation", std::move(scores), inputs,
      [inputs, coords_copy, c, groups, depth, h, w](Tape& t, const Tensor& g, const Tensor&) {
        const std::size_t nsrc = inputs.size() - 1;
        std::vector<const double*> sp, cp;
        std::vector<double*> gp;
        for (std::size_t s = 0; s < nsrc; ++s) {
          sp.push_back(t.value(inputs[s + 1]).data());
          cp.push_back((*coords_copy)[s].data());
          auto* gs = grad_if(t, inputs[s + 1]);
          gp.push_back(gs ? gs->data() : nullptr);
        }
        auto* gr = grad_if(t, inputs[0]);
        kn::cost_volume_backward(t.value(inputs[0]).data(), sp.data(), cp.data(), static_cast<std::int64_t>(nsrc),
                                 g.data(), gr ? gr->data() : nullptr, gp.data(), c, groups, depth, h, w);
      });
  return {out, std::move(valid)};
}

Var cross_entropy_depth(Var logits, const std::vector<int>& labels, const Tensor& mask) {
  const auto& lv = logits.value();
  if (lv.rank() != 3) throw ShapeError("cross_entropy_depth: logits must be [D,H,W]");
  const std::int64_t d = lv.dim(0), np = lv.dim(1) * lv.dim(2);
  if (static_cast<std::int64_t>(labels.size()) != np || mask.numel() != np) {
    throw ShapeError("cross_entropy_depth: labels/mask must have H*W entries");
  }
  std::int64_t count = 0;
  double total = 0.0;
  for (std::int64_t p = 0; p < np; ++p) {
    if (mask[p] == 0.0) continue;
    const int lab = labels[static_cast<std::size_t>(p)];
    if (lab < 0 || lab >= d) throw ArgumentError("cross_entropy_depth: label out of range");
    double m = lv[p];
    for (std::int64_t k = 1; k < d; ++k) m = std::max(m, lv[k * np + p]);
    double s = 0.0;
    for (std::int64_t k = 0; k < d; ++k) s += std::exp(lv[k * np + p] - m);
    total += m + std::log(s) - lv[lab * np + p];
    ++count;
  }
  if (count == 0) throw ArgumentError("cross_entropy_depth: no valid pixels");
  const double inv = 1.0 / static_cast<double>(count);
  return logits.tape().record(
      "cross_entropy_depth", Tensor::scalar(total * inv), {logits},
      [logits, labels, mask, d, np, inv](Tape& t, const Tensor& g, const Tensor&) {
        auto* gl = grad_if(t, logits);
        if (!gl) return;
        const auto& lv = t.value(logits);
        for (std::int64_t p = 0; p < np; ++p) {
          if (mask[p] == 0.0) continue;
          double m = lv[p];
          for (std::int64_t k = 1; k < d; ++k) m = std::max(m, lv[k * np + p]);
          double s = 0.0;
          for (std::int64_t k = 0; k < d; ++k) s += std::exp(lv[k * np + p] - m);
          for (std::int64_t k = 0; k < d; ++k) {
            const double prob = std::exp(lv[k * np + p] - m) / s;
            const double target = k == labels[static_cast<std::size_t>(p)] ? 1.0 : 0.0;
            (*gl)[k * np + p] += g[0] * inv * (prob - target);
          }
        }
      });
}

}  // namespace deskmvs
