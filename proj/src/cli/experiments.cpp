#include "deskmvs/cli/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "deskmvs/encodings/positional.hpp"
#include "deskmvs/numerics/init.hpp"
#include "deskmvs/numerics/optim.hpp"
#include "deskmvs/scenes/dataset.hpp"

namespace deskmvs::cli {

namespace {

Param random_param(const std::string& name, Shape shape, Rng& rng, double sd = 1.0) {
  return Param(name, rng.normal_tensor(std::move(shape), sd));
}

// Reduces any output to a scalar with fixed, non-uniform weights so that every
// output element contributes a distinct amount.
Var probe(Var x) {
  Tensor w(x.shape());
  for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = std::cos(0.37 * static_cast<double>(i) + 0.1);
  return weighted_sum(x, w);
}

// Every coordinate of every parameter is probed.
GradCheckResult check(const ParamList& params, const std::function<Var(Tape&)>& f, std::uint64_t seed) {
  GradCheckOptions opts;
  opts.seed = seed;
  return check_gradient(f, params, opts);
}

Camera toy_camera(std::int64_t h, std::int64_t w) {
  Camera c;
  c.K << 2.0 * static_cast<double>(w), 0.0, 0.5 * static_cast<double>(w - 1), 0.0, 2.0 * static_cast<double>(w),
      0.5 * static_cast<double>(h - 1), 0.0, 0.0, 1.0;
  c.d_near = 400.0;
  c.d_far = 1000.0;
  return c;
}

// Unary op on one random [3, 5] input.
GradCase unary(std::string name, std::function<Var(Var)> op, double sd = 1.0) {
  return {name, [op, sd](std::uint64_t seed) {
            Rng rng(seed);
            Param x = random_param("x", {3, 5}, rng, sd);
            return check({&x}, [&](Tape& t) { return probe(op(t.param(x))); }, seed);
          }};
}

GradCase binary(std::string name, std::function<Var(Var, Var)> op, Shape sa, Shape sb) {
  return {name, [op, sa, sb](std::uint64_t seed) {
            Rng rng(seed);
            Param a = random_param("a", sa, rng), b = random_param("b", sb, rng);
            return check({&a, &b}, [&](Tape& t) { return probe(op(t.param(a), t.param(b))); }, seed);
          }};
}

GradCase block_case(std::string name, LnPlacement ln, bool cross) {
  return {name, [ln, cross](std::uint64_t seed) {
            Rng rng(seed);
            BlockConfig bc;
            bc.d_model = 8;
            bc.ln = ln;
            bc.cross = cross;
            bc.attention.d_model = 8;
            bc.attention.heads = 2;
            bc.attention.scaling = ScalingRule::kAas;
            bc.attention.mean_length = 6.0;
            TransformerBlock block("blk", bc, rng);
            Param x = random_param("x", {5, 8}, rng), kv = random_param("kv", {7, 8}, rng);
            ParamList ps = block.params();
            ps.push_back(&x);
            if (cross) ps.push_back(&kv);
            return check(
                ps,
                [&](Tape& t) {
                  std::optional<Var> m;
                  if (cross) m = t.param(kv);
                  return probe(block.forward(t, t.param(x), m));
                }, seed);
          }};
}

}  // namespace

std::vector<GradCase> gradcheck_cases() {
  std::vector<GradCase> c;
  c.push_back(binary("add", [](Var a, Var b) { return add(a, b); }, {3, 4}, {3, 4}));
  c.push_back(binary("sub", [](Var a, Var b) { return sub(a, b); }, {3, 4}, {3, 4}));
  c.push_back(binary("mul", [](Var a, Var b) { return mul(a, b); }, {3, 4}, {3, 4}));
  c.push_back(unary("scale", [](Var x) { return scale(x, -1.7); }));
  c.push_back(binary("add_bias", [](Var a, Var b) { return add_bias(a, b); }, {4, 3}, {3}));
  c.push_back(binary("mul_channel", [](Var a, Var b) { return mul_channel(a, b); }, {4, 3}, {3}));
  c.push_back(binary("matmul", [](Var a, Var b) { return matmul(a, b); }, {3, 4}, {4, 5}));
  c.push_back({"linear", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param x = random_param("x", {5, 4}, rng), w = random_param("w", {4, 3}, rng),
                       b = random_param("b", {3}, rng);
                 return check({&x, &w, &b},
                              [&](Tape& t) { return probe(linear(t.param(x), t.param(w), t.param(b))); }, seed);
               }});
  c.push_back(unary("transpose", [](Var x) { return transpose(x); }));
  c.push_back(unary("reshape", [](Var x) { return reshape(mul(x, x), {5, 3}); }));
  c.push_back(binary("concat_rows", [](Var a, Var b) { return concat(std::array<Var, 2>{a, b}, 0); }, {2, 3}, {4, 3}));
  c.push_back(binary("concat_cols", [](Var a, Var b) { return concat(std::array<Var, 2>{a, b}, 1); }, {3, 2}, {3, 4}));
  c.push_back({"split_merge_heads", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param x = random_param("x", {5, 8}, rng);
                 return check({&x}, [&](Tape& t) {
                   Var h = split_heads(t.param(x), 2);
                   return probe(merge_heads(mul(h, h)));
                 }, seed);
               }});
  c.push_back(unary("softmax_scaled", [](Var x) { return softmax_scaled(x, 0.7); }));
  c.push_back({"layer_norm", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param x = random_param("x", {4, 6}, rng), g = random_param("g", {6}, rng),
                       b = random_param("b", {6}, rng);
                 return check({&x, &g, &b},
                              [&](Tape& t) { return probe(layer_norm(t.param(x), t.param(g), t.param(b))); }, seed);
               }});
  c.push_back(unary("gelu", [](Var x) { return gelu(x); }, 2.0));
  c.push_back(unary("elu_feature_map", [](Var x) { return elu_feature_map(x); }, 2.0));
  c.push_back(unary("sum", [](Var x) { return sum(mul(x, x)); }));
  c.push_back(unary("mean", [](Var x) { return mean(mul(x, x)); }));
  c.push_back({"bilinear_sample", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param src = random_param("src", {2, 5, 6}, rng);
                 Tensor xy({2, 4, 4});
                 for (std::int64_t i = 0; i < 16; ++i) {
                   xy[i] = rng.uniform(0.1, 4.9);
                   xy[16 + i] = rng.uniform(0.1, 3.9);
                 }
                 Param coords("coords", xy);
                 return check({&src, &coords}, [&](Tape& t) {
                   return probe(bilinear_sample(t.param(src), t.param(coords)).values);
                 }, seed);
               }});
  c.push_back({"patchify3d", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param x = random_param("x", {2, 4, 8, 8}, rng), w = random_param("w", {3, 64}, rng, 0.2),
                       b = random_param("b", {3}, rng);
                 return check({&x, &w, &b},
                              [&](Tape& t) { return probe(patchify3d(t.param(x), t.param(w), t.param(b))); }, seed);
               }});
  c.push_back({"unpatchify3d", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param x = random_param("x", {3, 2, 2, 2}, rng), w = random_param("w", {3, 64}, rng),
                       b = random_param("b", {2}, rng);
                 return check({&x, &w, &b}, [&](Tape& t) {
                   return probe(unpatchify3d(t.param(x), t.param(w), t.param(b), 2));
                 }, seed);
               }});
  for (const auto& [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}}) {
    c.push_back({"conv2d_s" + std::to_string(stride), [stride, pad](std::uint64_t seed) {
                   Rng rng(seed);
                   Param x = random_param("x", {2, 6, 7}, rng), w = random_param("w", {3, 2, 3, 3}, rng),
                         b = random_param("b", {3}, rng);
                   return check({&x, &w, &b}, [&](Tape& t) {
                     return probe(conv2d(t.param(x), t.param(w), t.param(b), stride, pad));
                   }, seed);
                 }});
  }
  c.push_back({"conv3d", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param x = random_param("x", {2, 4, 5, 5}, rng), w = random_param("w", {2, 2, 3, 3, 3}, rng),
                       b = random_param("b", {2}, rng);
                 return check({&x, &w, &b},
                              [&](Tape& t) { return probe(conv3d(t.param(x), t.param(w), t.param(b))); }, seed);
               }});
  c.push_back(unary("upsample_nearest", [](Var x) { return upsample_nearest(reshape(x, {1, 3, 5}), 2); }));
  for (const bool lin : {false, true}) {
    c.push_back({lin ? "attention_linear" : "attention_softmax", [lin](std::uint64_t seed) {
                   Rng rng(seed);
                   Param q = random_param("q", {2, 5, 4}, rng), k = random_param("k", {2, 7, 4}, rng),
                         v = random_param("v", {2, 7, 4}, rng);
                   return check({&q, &k, &v}, [&](Tape& t) {
                     return probe(lin ? attention_linear(t.param(q), t.param(k), t.param(v))
                                      : attention_softmax(t.param(q), t.param(k), t.param(v), 0.6));
                   }, seed);
                 }});
  }
  c.push_back({"group_correlation", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param ref = random_param("ref", {8, 5, 6}, rng), s1 = random_param("s1", {8, 5, 6}, rng),
                       s2 = random_param("s2", {8, 5, 6}, rng);
                 std::vector<Tensor> coords;
                 for (int s = 0; s < 2; ++s) {
                   Tensor xy({3, 2, 5, 6});
                   for (std::int64_t d = 0; d < 3; ++d) {
                     for (std::int64_t p = 0; p < 30; ++p) {
                       // Some taps land outside the map to exercise the mask.
                       xy[(d * 2) * 30 + p] = rng.uniform(-0.8, 5.6);
                       xy[(d * 2 + 1) * 30 + p] = rng.uniform(-0.8, 4.6);
                     }
                   }
                   coords.push_back(std::move(xy));
                 }
                 return check({&ref, &s1, &s2}, [&](Tape& t) {
                   const std::array<Var, 2> srcs{t.param(s1), t.param(s2)};
                   return probe(group_correlation(t.param(ref), srcs, coords, 4).scores);
                 }, seed);
               }});
  c.push_back({"cross_entropy_depth", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param logits = random_param("logits", {4, 3, 5}, rng);
                 std::vector<int> labels(15);
                 Tensor mask({3, 5});
                 for (std::int64_t p = 0; p < 15; ++p) {
                   labels[static_cast<std::size_t>(p)] = static_cast<int>(rng.index(4));
                   mask[p] = p == 0 || rng.uniform() < 0.7 ? 1.0 : 0.0;
                 }
                 return check({&logits},
                              [&](Tape& t) { return cross_entropy_depth(t.param(logits), labels, mask); }, seed);
               }});
  c.push_back({"fpe_3d", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param proj = random_param("proj", {24, 8}, rng, 0.3);
                 const Camera cam = toy_camera(4, 6);
                 const FrustumGrid grid = FrustumGrid::dense({450.0, 600.0, 900.0}, 4, 6);
                 return check({&proj}, [&](Tape& t) { return probe(fpe_3d(t, cam, grid, t.param(proj))); }, seed);
               }});
  c.push_back({"vanilla_attention_aas", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Param q = random_param("q", {2, 5, 4}, rng), k = random_param("k", {2, 9, 4}, rng),
                       v = random_param("v", {2, 9, 4}, rng);
                 AttentionConfig ac;
                 ac.d_model = 8;
                 ac.heads = 2;
                 ac.scaling = ScalingRule::kAas;
                 ac.mean_length = 4.0;
                 return check({&q, &k, &v}, [&](Tape& t) {
                   return probe(vanilla_attention(t.param(q), t.param(k), t.param(v), ac));
                 }, seed);
               }});
  c.push_back(block_case("block_pre_ln", LnPlacement::kPre, false));
  c.push_back(block_case("block_post_ln", LnPlacement::kPost, false));
  c.push_back(block_case("block_pre_ln_cross", LnPlacement::kPre, true));
  c.push_back(block_case("block_post_ln_cross", LnPlacement::kPost, true));
  c.push_back({"als", [](std::uint64_t seed) {
                 Rng rng(seed);
                 AlsCoeffs als("als", 2, 6);
                 for (Param* p : als.params()) p->value = rng.normal_tensor(p->value.shape());
                 Param x = random_param("x", {4, 6}, rng);
                 ParamList ps = als.params();
                 ps.push_back(&x);
                 return check(ps, [&](Tape& t) { return probe(als.apply(t, t.param(x), 1)); }, seed);
               }});
  c.push_back({"sva_block", [](std::uint64_t seed) {
                 Rng rng(seed);
                 SvaBlock block("sva", 8, 2, AttentionKind::kLinear, rng);
                 AlsCoeffs als("als", 2, 8);
                 Param r = random_param("r", {4, 8}, rng), s = random_param("s", {4, 8}, rng);
                 const std::vector<Tensor> inj{rng.normal_tensor({4, 8}), rng.normal_tensor({4, 8})};
                 ParamList ps = block.params();
                 for (Param* p : als.params()) ps.push_back(p);
                 ps.push_back(&r);
                 ps.push_back(&s);
                 return check(ps, [&](Tape& t) {
                   SvaStreams in{t.param(r), {t.param(s)}};
                   SvaInjection injection{inj, &als, 1};
                   const SvaStreams out = block.forward(t, in, &injection);
                   return add(probe(out.ref), probe(out.srcs[0]));
                 }, seed);
               }});
  c.push_back({"cvt", [](std::uint64_t seed) {
                 Rng rng(seed);
                 CvtConfig cc;
                 cc.groups = 2;
                 cc.channels = 8;
                 cc.layers = 1;
                 cc.heads = 2;
                 cc.mean_length = 4.0;
                 CostVolumeTransformer cvt("cvt", cc, rng);
                 Param cost = random_param("cost", {2, 4, 8, 8}, rng);
                 const Camera cam = toy_camera(8, 8);
                 const DepthHypotheses hyps = inverse_depth_hypotheses(400.0, 1000.0, 4);
                 ParamList ps = cvt.params();
                 ps.push_back(&cost);
                 return check(ps, [&](Tape& t) { return probe(cvt.forward(t, t.param(cost), cam, hyps, 0)); }, seed);
               }});
  c.push_back({"conv3d_regularizer", [](std::uint64_t seed) {
                 Rng rng(seed);
                 Conv3dRegularizer reg("reg", 2, 3, rng);
                 Param cost = random_param("cost", {2, 4, 4, 5}, rng);
                 ParamList ps = reg.params();
                 ps.push_back(&cost);
                 return check(ps, [&](Tape& t) { return probe(reg.forward(t, t.param(cost))); }, seed);
               }});
  return c;
}

// ---- entropy ---------------------------------------------------------------------------

EntropySweep run_entropy_sweep(const EntropySweepConfig& cfg) {
  if (cfg.lengths.empty() || cfg.seeds < 1 || cfg.queries < 1) throw ArgumentError("entropy sweep: empty sweep");
  for (const auto n : cfg.lengths) {
    if (n < 2) throw ArgumentError("entropy sweep: lengths must be >= 2");
  }
  const auto d = cfg.head_dim;
  const double dd = static_cast<double>(d);
  const std::size_t nl = cfg.lengths.size();
  std::vector<std::vector<double>> h_def(nl), h_aas(nl);

  auto mean_entropy = [](const Eigen::MatrixXd& logits, double scale) {
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const Eigen::ArrayXd z = scale * logits.row(r).transpose().array();
      const Eigen::ArrayXd e = (z - z.maxCoeff()).exp();
      const Eigen::ArrayXd p = e / e.sum();
      total -= (p * (p.max(1e-300)).log()).sum();
    }
    return total / static_cast<double>(logits.rows());
  };

  Rng root(cfg.seed);
  for (int s = 0; s < cfg.seeds; ++s) {
    Rng rng = root.fork();
    for (std::size_t i = 0; i < nl; ++i) {
      const auto n = cfg.lengths[i];
      Eigen::MatrixXd q(cfg.queries, d), k(n, d);
      for (Eigen::Index j = 0; j < q.size(); ++j) q.data()[j] = rng.normal();
      for (Eigen::Index j = 0; j < k.size(); ++j) k.data()[j] = rng.normal();
      const Eigen::MatrixXd logits = q * k.transpose();
      h_def[i].push_back(mean_entropy(logits, 1.0 / std::sqrt(dd)));
      h_aas[i].push_back(mean_entropy(logits, aas_scale(static_cast<double>(n), dd, cfg.mean_length)));
    }
  }

  auto stats = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (const double x : v) var += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0};
  };
  EntropySweep out;
  for (std::size_t i = 0; i < nl; ++i) {
    EntropyRow row;
    row.n = cfg.lengths[i];
    std::tie(row.default_mean, row.default_std) = stats(h_def[i]);
    std::tie(row.aas_mean, row.aas_std) = stats(h_aas[i]);
    out.rows.push_back(row);
  }
  for (int s = 0; s < cfg.seeds; ++s) {
    const auto si = static_cast<std::size_t>(s);
    out.default_drift.push_back(std::abs(h_def[nl - 1][si] - h_def[0][si]) / h_def[0][si]);
    out.aas_drift.push_back(std::abs(h_aas[nl - 1][si] - h_aas[0][si]) / h_aas[0][si]);
  }
  return out;
}

// ---- LN placement -----------------------------------------------------------------------

std::vector<double> ln_toy_losses(LnPlacement ln, const LnToyConfig& cfg, std::uint64_t seed) {
  const auto d = cfg.d_model, n = cfg.tokens;
  // Data and teacher come from their own stream so both placements see the
  // same task; the model stream is shared too, giving identical initial
  // weights wherever the two architectures have the same parameters.
  Rng data_rng(seed ^ 0xDA7AULL);
  const Tensor a = data_rng.normal_tensor({d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  const Tensor b = data_rng.normal_tensor({d, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<Tensor> xs, ys;
  for (std::int64_t s = 0; s < cfg.sequences; ++s) {
    Tensor x = data_rng.normal_tensor({n, d});
    // Target mixes a per-token map with a sequence summary, so attention is
    // needed to fit it.
    Tensor y({n, d});
    std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] += x[i * d + j] / static_cast<double>(n);
    }
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < d; ++k) {
          acc += x[i * d + k] * a[k * d + j] + pooled[static_cast<std::size_t>(k)] * b[k * d + j];
        }
        y[i * d + j] = std::tanh(acc);
      }
    }
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
  }

  Rng model_rng(seed);
  BlockConfig bc;
  bc.d_model = d;
  bc.ln = ln;
  bc.attention.d_model = d;
  bc.attention.heads = cfg.heads;
  std::vector<std::unique_ptr<TransformerBlock>> blocks;
  for (int i = 0; i < cfg.blocks; ++i) {
    blocks.push_back(std::make_unique<TransformerBlock>("toy" + std::to_string(i), bc, model_rng));
  }
  Param head_w = affine_init("head.w", {d, d}, d, model_rng);
  Param head_b = affine_init("head.b", {d}, d, model_rng);
  // A Pre-LN stack ends in a final LN so its output scale matches Post-LN.
  Param out_g = constant_init("out.g", {d}, 1.0), out_b = constant_init("out.b", {d}, 0.0);
  ParamList params{&head_w, &head_b};
  if (ln == LnPlacement::kPre) {
    params.push_back(&out_g);
    params.push_back(&out_b);
  }
  for (auto& blk : blocks) {
    for (Param* p : blk->params()) params.push_back(p);
  }
  AdamOptions ao;
  ao.lr = cfg.lr;
  ao.clip_norm = 0.0;
  Adam opt(params, ao);

  std::vector<double> losses;
  const double inv = 1.0 / static_cast<double>(cfg.sequences * n * d);
  for (int step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    Tape tape;
    std::optional<Var> total;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      Var h = tape.constant(xs[s]);
      for (auto& blk : blocks) h = blk->forward(tape, h);
      if (ln == LnPlacement::kPre) h = layer_norm(h, tape.param(out_g), tape.param(out_b));
      const Var pred = linear(h, tape.param(head_w), tape.param(head_b));
      const Var diff = sub(pred, tape.constant(ys[s]));
      const Var l = scale(sum(mul(diff, diff)), inv);
      total = total ? add(*total, l) : l;
    }
    tape.backward(*total);
    opt.step();
    losses.push_back(total->value()[0]);
  }
  return losses;
}

// ---- training -----------------------------------------------------------------------------

SceneSplit load_scenes(const ExperimentConfig& cfg) {
  SceneSplit out;
  if (cfg.data.dir) {
    for (const auto& e : read_manifest(*cfg.data.dir)) {
      SceneSample s = read_scene(*cfg.data.dir / e.dir);
      (e.split == "train" ? out.train : out.val).push_back(std::move(s));
    }
    if (out.train.empty() || out.val.empty()) throw ConfigError("dataset needs both train and val scenes");
    return out;
  }
  const int count = cfg.data.train + cfg.data.val;
  const Dataset plan =
      plan_dataset(cfg.data.seed, count, static_cast<double>(cfg.data.train) / static_cast<double>(count), cfg.scene);
  out.train.resize(plan.train.size());
  out.val.resize(plan.val.size());
  // Rendering is pure per seed, so scenes can be produced in any order.
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < plan.train.size() + plan.val.size(); ++i) {
    const bool tr = i < plan.train.size();
    const auto& e = tr ? plan.train[i] : plan.val[i - plan.train.size()];
    (tr ? out.train[i] : out.val[i - plan.train.size()]) = generate_scene(e.seed, cfg.scene);
  }
  return out;
}

RunResult train_and_evaluate(const ExperimentConfig& cfg, const SceneSplit& scenes, std::uint64_t seed,
                             const std::function<void(int, double)>& on_step) {
  MvsModel model(cfg.model, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  RunResult r;
  r.trainable_params = count_parameters(model.trainable_params());
  const TrainLog log = train_model(model, scenes.train, tc, on_step);
  r.losses = log.loss;
  r.train_seconds = log.seconds;
  r.metrics = evaluate_model(model, scenes.val);
  return r;
}

nlohmann::json metrics_json(const EvalMetrics& m) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : m.stage_ratios) stages.push_back({{"e2", s[0]}, {"e4", s[1]}, {"e8", s[2]}});
  return {{"e2", m.ratios[0]},
          {"e4", m.ratios[1]},
          {"e8", m.ratios[2]},
          {"mean_abs_error_mm", m.mean_abs_error},
          {"pixels", m.pixels},
          {"stages", stages}};
}

// ---- ablation ----------------------------------------------------------------------------------

std::vector<AblationRow> ablation_rows() {
  auto base = [](ModelConfig& m) {
    m.stages.front().regularizer = Regularizer::kCvt;
    m.cvt.fpe = false;
    m.cvt.scaling = ScalingRule::kDefault;
    m.features.sva = false;
    m.features.norm_als = false;
  };
  return {
      {"conv3d", [base](ModelConfig& m) {
         base(m);
         m.stages.front().regularizer = Regularizer::kConv3d;
       }},
      {"cvt", base},
      {"cvt+fpe", [base](ModelConfig& m) {
         base(m);
         m.cvt.fpe = true;
       }},
      {"cvt+fpe+aas", [base](ModelConfig& m) {
         base(m);
         m.cvt.fpe = true;
         m.cvt.scaling = ScalingRule::kAas;
       }},
      {"cvt+fpe+aas+sva", [base](ModelConfig& m) {
         base(m);
         m.cvt.fpe = true;
         m.cvt.scaling = ScalingRule::kAas;
         m.features.sva = true;
       }},
      {"cvt+fpe+aas+sva+norm_als", [base](ModelConfig& m) {
         base(m);
         m.cvt.fpe = true;
         m.cvt.scaling = ScalingRule::kAas;
         m.features.sva = true;
         m.features.norm_als = true;
       }},
  };
}

// ---- extrapolation -------------------------------------------------------------------------------

ExtrapolationResult run_extrapolation(const ExtrapolationConfig& cfg, std::uint64_t seed) {
  ExperimentConfig train_cfg = default_experiment();
  train_cfg.scene.height = cfg.train_height;
  train_cfg.scene.width = cfg.train_width;
  train_cfg.data.train = cfg.train_scenes;
  train_cfg.data.val = 1;
  train_cfg.data.seed = seed;
  train_cfg.model.stages = {{0.125, cfg.hypotheses, Regularizer::kCvt}};
  train_cfg.model.cvt.layers = cfg.cvt_layers;
  train_cfg.train.steps = cfg.steps;
  train_cfg.train.lr = cfg.lr;

  ExtrapolationResult out;
  const PatchStride st;
  out.train_tokens = cvt_sequence_length(cfg.hypotheses, cfg.train_height / 8, cfg.train_width / 8, st);
  out.eval_tokens = cvt_sequence_length(cfg.hypotheses, cfg.eval_height / 8, cfg.eval_width / 8, st);
  train_cfg.model.cvt.mean_length = static_cast<double>(out.train_tokens);

  const SceneSplit train_scenes = load_scenes(train_cfg);
  ExperimentConfig eval_cfg = train_cfg;
  eval_cfg.scene.height = cfg.eval_height;
  eval_cfg.scene.width = cfg.eval_width;
  eval_cfg.data.train = 1;
  eval_cfg.data.val = cfg.eval_scenes;
  eval_cfg.data.seed = seed ^ 0xE7A1ULL;
  SceneSplit eval_scenes = load_scenes(eval_cfg);
  eval_scenes.train = train_scenes.train;

  for (const bool on : {true, false}) {
    ExperimentConfig run = train_cfg;
    run.model.cvt.fpe = on;
    run.model.cvt.scaling = on ? ScalingRule::kAas : ScalingRule::kDefault;
    (on ? out.with_fpe_aas : out.without) = train_and_evaluate(run, eval_scenes, seed).metrics;
  }
  return out;
}

}  // namespace deskmvs::cli
