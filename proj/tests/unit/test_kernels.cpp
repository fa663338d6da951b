// Parallel kernels against their serial references, with several thread counts.
#include <doctest.h>

#include <algorithm>
#include <vector>

#include "deskmvs/kernels/kernels.hpp"
#include "deskmvs/numerics/random.hpp"

using namespace deskmvs;
namespace k = deskmvs::kernels;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct ThreadGuard {
  int saved = k::num_threads();
  ~ThreadGuard() { k::set_num_threads(saved); }
};

}  // namespace

TEST_CASE("gemm matches the reference in every transpose mode") {
  ThreadGuard guard;
  Rng rng(1);
  const std::int64_t m = 37, n = 23, kk = 19;
  for (const int threads : {1, 3}) {
    k::set_num_threads(threads);
    for (const bool ta : {false, true}) {
      for (const bool tb : {false, true}) {
        const auto a = randn(rng, m * kk), b = randn(rng, kk * n), c0 = randn(rng, m * n);
        auto c1 = c0, c2 = c0;
        k::gemm(ta, tb, m, n, kk, 0.7, a.data(), b.data(), 0.3, c1.data());
        k::reference::gemm(ta, tb, m, n, kk, 0.7, a.data(), b.data(), 0.3, c2.data());
        CHECK(max_diff(c1, c2) < 1e-12);
      }
    }
  }
}

TEST_CASE("softmax rows match the reference") {
  Rng rng(2);
  const auto x = randn(rng, 7 * 50);
  std::vector<double> a(x.size()), b(x.size());
  k::softmax_rows(x.data(), a.data(), 7, 50, 1.3);
  k::reference::softmax_rows(x.data(), b.data(), 7, 50, 1.3);
  CHECK(max_diff(a, b) < 1e-14);
}

TEST_CASE("streamed softmax attention matches the materialised reference") {
  ThreadGuard guard;
  Rng rng(3);
  const std::int64_t h = 3, nq = 11, nk = 29, dh = 8;
  const auto q = randn(rng, h * nq * dh), kv = randn(rng, h * nk * dh), v = randn(rng, h * nk * dh);
  std::vector<double> a(h * nq * dh), b(a.size()), lse(h * nq);
  for (const int threads : {1, 2}) {
    k::set_num_threads(threads);
    k::attention_forward(q.data(), kv.data(), v.data(), a.data(), lse.data(), h, nq, nk, dh, 0.4);
    k::reference::attention_forward(q.data(), kv.data(), v.data(), b.data(), h, nq, nk, dh, 0.4);
    CHECK(max_diff(a, b) < 1e-12);
  }
}

TEST_CASE("linear attention matches its quadratic form") {
  Rng rng(4);
  const std::int64_t h = 2, nq = 17, nk = 33, dh = 4;
  const auto q = randn(rng, h * nq * dh), kv = randn(rng, h * nk * dh), v = randn(rng, h * nk * dh);
  std::vector<double> a(h * nq * dh), b(a.size());
  k::linear_attention_forward(q.data(), kv.data(), v.data(), a.data(), h, nq, nk, dh, 1e-6);
  k::reference::linear_attention_quadratic(q.data(), kv.data(), v.data(), b.data(), h, nq, nk, dh, 1e-6);
  CHECK(max_diff(a, b) < 1e-12);
}

TEST_CASE("bilinear sampling matches the reference, including out-of-bounds taps") {
  Rng rng(5);
  const std::int64_t c = 3, h = 9, w = 11, ho = 6, wo = 7;
  const auto src = randn(rng, c * h * w);
  std::vector<double> coords(2 * ho * wo);
  for (std::int64_t i = 0; i < ho * wo; ++i) {
    coords[i] = rng.uniform(-2.0, static_cast<double>(w) + 1.0);
    coords[ho * wo + i] = rng.uniform(-2.0, static_cast<double>(h) + 1.0);
  }
  std::vector<double> a(c * ho * wo), b(a.size()), ma(ho * wo), mb(ho * wo);
  k::bilinear_forward(src.data(), coords.data(), a.data(), ma.data(), c, h, w, ho, wo);
  k::reference::bilinear_forward(src.data(), coords.data(), b.data(), mb.data(), c, h, w, ho, wo);
  CHECK(max_diff(a, b) < 1e-14);
  CHECK(max_diff(ma, mb) == 0.0);
  CHECK(std::count(ma.begin(), ma.end(), 0.0) > 0);
}

TEST_CASE("cost volume matches the reference") {
  ThreadGuard guard;
  Rng rng(6);
  const std::int64_t c = 8, g = 4, d = 5, h = 6, w = 7, views = 2;
  const auto ref = randn(rng, c * h * w);
  std::vector<std::vector<double>> srcs, coords;
  for (int s = 0; s < views; ++s) {
    srcs.push_back(randn(rng, c * h * w));
    std::vector<double> xy(d * 2 * h * w);
    for (auto& v : xy) v = rng.uniform(-1.0, 7.5);
    coords.push_back(std::move(xy));
  }
  const double* sp[] = {srcs[0].data(), srcs[1].data()};
  const double* cp[] = {coords[0].data(), coords[1].data()};
  std::vector<double> a(g * d * h * w), b(a.size()), va(d * h * w), vb(va.size());
  for (const int threads : {1, 4}) {
    k::set_num_threads(threads);
    k::cost_volume_forward(ref.data(), sp, cp, views, a.data(), va.data(), c, g, d, h, w);
    k::reference::cost_volume_forward(ref.data(), sp, cp, views, b.data(), vb.data(), c, g, d, h, w);
    CHECK(max_diff(a, b) < 1e-12);
    CHECK(max_diff(va, vb) == 0.0);
  }
}

TEST_CASE("results do not depend on the thread count") {
  ThreadGuard guard;
  Rng rng(7);
  const std::int64_t m = 64, n = 48, kk = 40;
  const auto a = randn(rng, m * kk), b = randn(rng, kk * n);
  std::vector<double> c1(m * n), c4(m * n);
  k::set_num_threads(1);
  k::gemm(false, false, m, n, kk, 1.0, a.data(), b.data(), 0.0, c1.data());
  k::set_num_threads(4);
  k::gemm(false, false, m, n, kk, 1.0, a.data(), b.data(), 0.0, c4.data());
  CHECK(c1 == c4);
}

TEST_CASE("im2col and col2im are adjoint") {
  Rng rng(8);
  const std::int64_t c = 2, h = 7, w = 6, kk = 3, stride = 2, pad = 1;
  const std::int64_t ho = (h + 2 * pad - kk) / stride + 1, wo = (w + 2 * pad - kk) / stride + 1;
  const auto x = randn(rng, c * h * w), y = randn(rng, c * kk * kk * ho * wo);
  std::vector<double> col(y.size()), back(x.size(), 0.0);
  k::im2col_2d(x.data(), col.data(), c, h, w, kk, stride, pad, ho, wo);
  k::col2im_2d(y.data(), back.data(), c, h, w, kk, stride, pad, ho, wo);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += col[i] * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
