// Acceptance checks. Prints one PASS/FAIL line per criterion; `--only N` runs
// a single one (ctest registers each separately). Exit status is non-zero if
// any executed criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "deskmvs/attention/attention.hpp"
#include "deskmvs/cli/config.hpp"
#include "deskmvs/cli/experiments.hpp"
#include "deskmvs/encodings/positional.hpp"
#include "deskmvs/geometry/warp.hpp"
#include "deskmvs/pipeline/depth.hpp"
#include "deskmvs/pipeline/model.hpp"
#include "deskmvs/pipeline/train.hpp"

using namespace deskmvs;
using namespace deskmvs::cli;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 -----------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  const auto cases = gradcheck_cases();
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const double e = c.run(seed).max_rel_error;
      if (!(e <= worst)) {
        worst = e;
        worst_case = c.name;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-6 && t < 120.0,
          fmt("%zu cases x 5 seeds, worst rel err %.2e (%s), %.1f s", cases.size(), worst, worst_case.c_str(), t)};
}

// ---- 2 -----------------------------------------------------------------------------

// Direct O(n^2) kernel attention: every query against every key with
// phi(x) = elu(x) + 1, normalised per row.
Tensor quadratic_kernel_attention(const Tensor& q, const Tensor& k, const Tensor& v, double eps) {
  const std::int64_t h = q.dim(0), n = q.dim(1), m = k.dim(1), d = q.dim(2);
  auto phi = [](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); };
  Tensor out(q.shape());
  std::vector<double> pq(static_cast<std::size_t>(d));
  for (std::int64_t hh = 0; hh < h; ++hh) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t c = 0; c < d; ++c) pq[static_cast<std::size_t>(c)] = phi(q[(hh * n + i) * d + c]);
      double den = 0.0;
      double* o = out.data() + (hh * n + i) * d;
      for (std::int64_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::int64_t c = 0; c < d; ++c) s += pq[static_cast<std::size_t>(c)] * phi(k[(hh * m + j) * d + c]);
        den += s;
        for (std::int64_t c = 0; c < d; ++c) o[c] += s * v[(hh * m + j) * d + c];
      }
      for (std::int64_t c = 0; c < d; ++c) o[c] /= den + eps;
    }
  }
  return out;
}

Outcome linear_attention_equivalence() {
  double worst = 0.0;
  Rng rng(2);
  for (const std::int64_t n : {16, 512, 2048}) {
    for (const std::int64_t dh : {8, 32}) {
      AttentionConfig cfg;
      cfg.heads = 2;
      cfg.d_model = 2 * dh;
      cfg.kind = AttentionKind::kLinear;
      const Tensor q = rng.normal_tensor({2, n, dh}), k = rng.normal_tensor({2, n, dh}), v = rng.normal_tensor({2, n, dh});
      Tape tape(false);
      const Tensor fast = linear_attention(tape.constant(q), tape.constant(k), tape.constant(v), cfg).value();
      worst = std::max(worst, max_abs_diff(fast, quadratic_kernel_attention(q, k, v, kLinearAttentionEps)));
    }
  }
  return {worst < 1e-5, fmt("n in {16,512,2048}, d_h in {8,32}: max abs diff %.2e", worst)};
}

// ---- 3 -----------------------------------------------------------------------------

Outcome aas_closed_form() {
  double worst_ulps = 0.0;
  for (const double d : {1.0, 8.0, 32.0, 64.0, 128.0}) {
    for (const double nbar : {2.0, 48.0, 512.0, 4096.0, 12186.0, 1e6}) {
      const double ref = 1.0 / std::sqrt(d);
      const double ulp = std::nextafter(ref, 1.0) - ref;
      worst_ulps = std::max(worst_ulps, std::abs(aas_scale(nbar, d, nbar) - ref) / ulp);
    }
  }
  using Big = boost::multiprecision::cpp_bin_float_50;
  const Big exact = boost::multiprecision::log(Big(27648)) / (boost::multiprecision::sqrt(Big(64)) *
                                                              boost::multiprecision::log(Big(12186)));
  const double got = aas_scale(27648.0, 64.0, 12186.0);
  const double err = std::abs(static_cast<double>(Big(got) - exact));
  return {worst_ulps <= 2.0 && err < 1e-12,
          fmt("aas(n,d,n) within %.0f ulp of 1/sqrt(d); aas(27648,64,12186)=%.17g, |err| vs 50-digit %.1e", worst_ulps,
              got, err)};
}

// ---- 4 -----------------------------------------------------------------------------

Outcome entropy_dilution() {
  const auto t0 = Clock::now();
  EntropySweepConfig cfg;  // d_h 64, n 512..8192, n_bar 512, 10 seeds
  const EntropySweep s = run_entropy_sweep(cfg);
  int better = 0;
  for (std::size_t i = 0; i < s.aas_drift.size(); ++i) better += s.aas_drift[i] < s.default_drift[i];
  const double h512 = s.rows.front().default_mean, h8192 = s.rows.back().default_mean;
  const double t = seconds_since(t0);
  return {h8192 > h512 && better >= 9 && t < 60.0,
          fmt("default H(512)=%.4f H(8192)=%.4f; AAS drift smaller in %d/10 seeds; %.1f s", h512, h8192, better, t)};
}

// ---- 5 -----------------------------------------------------------------------------

Outcome fpe_pe_geometry() {
  Rng rng(5);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int trial = 0; trial < 200; ++trial) {
    Camera cam;
    const auto h = 1 + rng.index(40), w = 1 + rng.index(40);
    const double f = rng.uniform(10.0, 2000.0);
    cam.K << f, 0.0, rng.uniform(0.0, static_cast<double>(w)), 0.0, f, rng.uniform(0.0, static_cast<double>(h)), 0.0,
        0.0, 1.0;
    cam.d_near = rng.uniform(1.0, 800.0);
    cam.d_far = cam.d_near * rng.uniform(1.01, 20.0);
    std::vector<double> depths{cam.d_near, cam.d_far};
    for (int k = 0; k < 6; ++k) depths.push_back(rng.uniform(cam.d_near, cam.d_far));
    const Tensor uvz = frustum_normalize(cam, FrustumGrid::dense(depths, h, w));
    const auto [a, b] = std::minmax_element(uvz.values().begin(), uvz.values().end());
    lo = std::min(lo, *a);
    hi = std::max(hi, *b);
  }
  // Row/column i of a 65-grid, 2i of a 129-grid and 4i of a 257-grid share a
  // normalised position.
  const std::int64_t c = 32;
  const Tensor p65 = normalized_pe_2d(65, 65, c), p129 = normalized_pe_2d(129, 129, c),
               p257 = normalized_pe_2d(257, 257, c);
  double diff = 0.0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < 65; ++y) {
      for (std::int64_t x = 0; x < 65; ++x) {
        const double a = p65.at({ch, y, x});
        diff = std::max(diff, std::abs(a - p129.at({ch, 2 * y, 2 * x})));
        diff = std::max(diff, std::abs(a - p257.at({ch, 4 * y, 4 * x})));
      }
    }
  }
  return {lo >= 0.0 && hi <= 1.0 && diff <= 1e-6,
          fmt("frustum coords in [%.3g, %.3g] over 200 random frusta; PE max diff across H {65,129,257} %.1e", lo, hi,
              diff)};
}

// ---- 6 -----------------------------------------------------------------------------

Outcome wta_oracle() {
  // Slanted planes: every reference pixel sees the surface that produced its
  // GT, so the ideal features match exactly at the true depth. A wider arc
  // than the training default keeps adjacent bins more than a pixel apart at
  // 1/8 scale, so interpolation error cannot swap neighbours.
  SceneConfig sc;
  sc.height = 128;
  sc.width = 192;
  sc.geometry = GeometryKind::kSlanted;
  sc.arc_min_deg = 14.0;
  sc.arc_max_deg = 18.0;
  const double scale = 0.125;
  const int depth_bins = 16;
  const std::int64_t h = 16, w = 24;
  double hit = 0.0, total = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const SceneSample s = generate_scene(500 + i, sc);
    Tape tape(false);
    std::vector<Var> feats;
    std::vector<Camera> cams;
    for (int v = 0; v < s.views(); ++v) {
      const Camera& cam = s.cameras[static_cast<std::size_t>(v)];
      feats.push_back(tape.constant(render_ideal_features(*s.geometry, cam, sc.height, sc.width, scale, 32, 8)));
      cams.push_back(cam.scaled(scale));
    }
    const Tensor vol = hypothesis_volume(inverse_depth_hypotheses(sc.d_near, sc.d_far, depth_bins), h, w);
    const CostVolume cv = build_cost_volume(feats[0], std::span(feats).subspan(1), cams[0],
                                            std::span(cams).subspan(1), vol, 8);
    const std::vector<int> idx = wta_index(sum_groups(cv.scores.value()));
    const auto [gt, mask] = sample_depth_map(s.depth, s.depth_mask, scale, h, w);
    for (std::int64_t p = 0; p < h * w; ++p) {
      if (mask[p] == 0.0) continue;
      // Pixels whose true match falls outside a source image have no
      // evidence at the correct depth; they are not valid for this check.
      const Eigen::Vector3d x = backproject(cams[0], static_cast<double>(p % w), static_cast<double>(p / w), gt[p]);
      bool visible = true;
      for (std::size_t v = 1; v < cams.size(); ++v) {
        const Projection pr = project_point(cams[v], x);
        visible = visible && pr.pixel.x() >= 0.0 && pr.pixel.y() >= 0.0 &&
                  pr.pixel.x() <= static_cast<double>(w - 1) && pr.pixel.y() <= static_cast<double>(h - 1);
      }
      if (!visible) continue;
      total += 1.0;
      hit += nearest_inverse_bin(vol.data() + p, depth_bins, h * w, gt[p]) == idx[static_cast<std::size_t>(p)];
    }
  }
  const double acc = hit / total;
  return {acc > 0.99, fmt("argmax == nearest GT bin on %.2f%% of %.0f valid pixels (20 scenes)", 100.0 * acc, total)};
}

// ---- 7 and 9 ---------------------------------------------------------------------------

struct ToyRun {
  EvalMetrics metrics;
  double seconds = 0.0;
  bool frozen_identical = false;
  std::size_t frozen_tensors = 0;
};

ToyRun toy_training() {
  const ExperimentConfig cfg = default_experiment();  // D = 16, 8; 64 x 96; N = 3; 200 train scenes
  const auto t0 = Clock::now();
  const SceneSplit scenes = load_scenes(cfg);
  MvsModel model(cfg.model, 0);
  std::vector<Tensor> initial;
  for (Param* p : model.frozen_params()) initial.push_back(p->value);
  TrainConfig tc = cfg.train;
  tc.seed = 0;
  train_model(model, scenes.train, tc);
  ToyRun r;
  r.metrics = evaluate_model(model, scenes.val);
  r.seconds = seconds_since(t0);
  r.frozen_identical = true;
  const ParamList frozen = model.frozen_params();
  r.frozen_tensors = frozen.size();
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    const auto& a = frozen[i]->value.storage();
    const auto& b = initial[i].storage();
    r.frozen_identical = r.frozen_identical && a.size() == b.size() &&
                         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  }
  return r;
}

Outcome end_to_end(const ToyRun& r) {
  const double e8 = r.metrics.ratios[2];
  return {e8 < 0.20 && r.seconds < 1800.0,
          fmt("2000 steps, 200 scenes: held-out e2 %.3f e4 %.3f e8 %.3f (stage 0 e8 %.3f); %.0f s", r.metrics.ratios[0],
              r.metrics.ratios[1], e8, r.metrics.stage_ratios.front()[2], r.seconds)};
}

Outcome side_tuning(const ToyRun& r) {
  return {r.frozen_identical && r.frozen_tensors > 0,
          fmt("%zu frozen backbone tensors %s after training", r.frozen_tensors,
              r.frozen_identical ? "bit-identical" : "CHANGED")};
}

// ---- 8 -----------------------------------------------------------------------------

Outcome ablation_directionality() {
  const ExtrapolationConfig cfg;
  int wins = 0;
  std::string detail;
  std::int64_t train_tokens = 0, eval_tokens = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ExtrapolationResult r = run_extrapolation(cfg, seed);
    train_tokens = r.train_tokens;
    eval_tokens = r.eval_tokens;
    const double a = r.with_fpe_aas.ratios[1], b = r.without.ratios[1];
    wins += a < b;
    detail += fmt(" %.3f/%.3f", a, b);
    std::printf("  seed %llu: e4 FPE+AAS %.4f, baseline %.4f\n", static_cast<unsigned long long>(seed), a, b);
    std::fflush(stdout);
  }
  return {wins >= 4, fmt("train %lld tokens, eval %lld tokens; FPE+AAS lower e4 in %d/5 seeds (e4 pairs:%s)",
                         static_cast<long long>(train_tokens), static_cast<long long>(eval_tokens), wins,
                         detail.c_str())};
}

// ---- 10 ----------------------------------------------------------------------------

Outcome ln_placement() {
  const LnToyConfig cfg;  // 6 blocks, 500 steps
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double pre = ln_toy_losses(LnPlacement::kPre, cfg, seed).back();
    const double post = ln_toy_losses(LnPlacement::kPost, cfg, seed).back();
    wins += pre <= post;
    detail += fmt(" %.3g/%.3g", pre, post);
  }
  return {wins >= 4, fmt("Pre-LN <= Post-LN at step 500 in %d/5 seeds (pre/post:%s)", wins, detail.c_str())};
}

// ---- 11 ----------------------------------------------------------------------------

Outcome temperature_limit() {
  Rng rng(11);
  double worst = 0.0;
  for (int m = 0; m < 100; ++m) {
    const std::int64_t d = 2 + rng.index(31), h = 1 + rng.index(12), w = 1 + rng.index(12), np = h * w;
    Tensor logits = rng.normal_tensor({d, h, w}, 3.0);
    Tensor hyps({d, h, w});
    for (std::int64_t p = 0; p < np; ++p) {
      const double c = rng.uniform(450.0, 950.0);
      for (std::int64_t k = 0; k < d; ++k) hyps[k * np + p] = 1.0 / (1.0 / c + 1e-5 * static_cast<double>(k - d / 2));
      // Lift a random bin clear of the rest by a margin > 1.
      const std::int64_t top = rng.index(d);
      double best = -std::numeric_limits<double>::infinity();
      for (std::int64_t k = 0; k < d; ++k) {
        if (k != top) best = std::max(best, logits[k * np + p]);
      }
      logits[top * np + p] = best + 1.0 + rng.uniform(1e-3, 2.0);
    }
    worst = std::max(worst, max_abs_diff(depth_expectation(logits, hyps, 1e-3), wta_depth(logits, hyps)));
  }
  return {worst == 0.0, fmt("100 maps, max |E_tau=1e-3 - WTA| = %.1e mm", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }
  if (only < 0 || only > 11) {
    std::fprintf(stderr, "usage: acceptance [--only 1..11]\n");
    return 2;
  }
  const char* names[] = {"",
                         "gradient oracle",
                         "linear-attention equivalence",
                         "AAS closed form",
                         "entropy dilution",
                         "FPE/PE geometry",
                         "WTA oracle",
                         "end-to-end toy training",
                         "ablation directionality",
                         "side-tuning contract",
                         "LN placement",
                         "temperature limit"};
  std::optional<ToyRun> toy;
  auto toy_run = [&]() -> const ToyRun& {
    if (!toy) toy = toy_training();
    return *toy;
  };
  const std::vector<std::function<Outcome()>> checks{
      {},
      gradient_oracle,
      linear_attention_equivalence,
      aas_closed_form,
      entropy_dilution,
      fpe_pe_geometry,
      wta_oracle,
      [&] { return end_to_end(toy_run()); },
      ablation_directionality,
      [&] { return side_tuning(toy_run()); },
      ln_placement,
      temperature_limit};
  bool all = true;
  for (int i = 1; i <= 11; ++i) {
    if (only != 0 && i != only) continue;
    Outcome o;
    try {
      o = checks[static_cast<std::size_t>(i)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", i, names[i], o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
