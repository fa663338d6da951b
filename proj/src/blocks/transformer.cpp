#include "deskmvs/blocks/transformer.hpp"

#include "deskmvs/numerics/init.hpp"

namespace deskmvs {

void BlockConfig::validate() const {
  if (d_model < 1 || ffn_expansion < 1) throw ArgumentError("block: bad d_model or FFN expansion");
  if (attention.d_model != d_model) throw ArgumentError("block: attention d_model differs from block d_model");
  attention.validate();
}

TransformerBlock::TransformerBlock(std::string prefix, BlockConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::int64_t d = cfg_.d_model, f = d * cfg_.ffn_expansion;
  auto w = [&](const char* n, Shape s, std::int64_t fan_in) { return affine_init(prefix + n, std::move(s), fan_in, rng); };
  wq_ = w(".wq", {d, d}, d);
  bq_ = w(".bq", {d}, d);
  wk_ = w(".wk", {d, d}, d);
  bk_ = w(".bk", {d}, d);
  wv_ = w(".wv", {d, d}, d);
  bv_ = w(".bv", {d}, d);
  wo_ = w(".wo", {d, d}, d);
  bo_ = w(".bo", {d}, d);
  w1_ = w(".w1", {d, f}, d);
  b1_ = w(".b1", {f}, d);
  w2_ = w(".w2", {f, d}, f);
  b2_ = w(".b2", {d}, f);
  ln1_g_ = constant_init(prefix + ".ln1.g", {d}, 1.0);
  ln1_b_ = constant_init(prefix + ".ln1.b", {d}, 0.0);
  ln2_g_ = constant_init(prefix + ".ln2.g", {d}, 1.0);
  ln2_b_ = constant_init(prefix + ".ln2.b", {d}, 0.0);
  lnkv_g_ = constant_init(prefix + ".lnkv.g", {d}, 1.0);
  lnkv_b_ = constant_init(prefix + ".lnkv.b", {d}, 0.0);
}

Var TransformerBlock::attention(Tape& tape, Var xq, Var xkv) {
  const std::int64_t heads = cfg_.attention.heads;
  Var q = split_heads(linear(xq, tape.param(wq_), tape.param(bq_)), heads);
  Var k = split_heads(linear(xkv, tape.param(wk_), tape.param(bk_)), heads);
  Var v = split_heads(linear(xkv, tape.param(wv_), tape.param(bv_)), heads);
  return linear(merge_heads(attend(q, k, v, cfg_.attention)), tape.param(wo_), tape.param(bo_));
}

Var TransformerBlock::ffn(Tape& tape, Var x) {
  Var hidden = gelu(linear(x, tape.param(w1_), tape.param(b1_)));
  return linear(hidden, tape.param(w2_), tape.param(b2_));
}

Var TransformerBlock::forward(Tape& tape, Var x, std::optional<Var> kv) {
  if (kv.has_value() != cfg_.cross) {
    throw ArgumentError(cfg_.cross ? "cross block needs key/value input" : "self block takes no key/value input");
  }
  if (x.value().rank() != 2 || x.dim(1) != cfg_.d_model) {
    throw ShapeError("transformer block: input must be [n, " + std::to_string(cfg_.d_model) + "], got " +
                     shape_string(x.shape()));
  }
  if (kv && (kv->value().rank() != 2 || kv->dim(1) != cfg_.d_model)) {
    throw ShapeError("transformer block: kv must be [m, " + std::to_string(cfg_.d_model) + "]");
  }
  auto ln1 = [&](Var v) { return layer_norm(v, tape.param(ln1_g_), tape.param(ln1_b_)); };
  auto ln2 = [&](Var v) { return layer_norm(v, tape.param(ln2_g_), tape.param(ln2_b_)); };
  if (cfg_.ln == LnPlacement::kPre) {
    Var h = ln1(x);
    Var src = kv ? layer_norm(*kv, tape.param(lnkv_g_), tape.param(lnkv_b_)) : h;
    x = add(x, attention(tape, h, src));
    return add(x, ffn(tape, ln2(x)));
  }
  x = ln1(add(x, attention(tape, x, kv ? *kv : x)));
  return ln2(add(x, ffn(tape, x)));
}

void TransformerBlock::zero_residual_branches() {
  for (Param* p : {&wo_, &bo_, &w2_, &b2_}) p->value.fill(0.0);
}

ParamList TransformerBlock::params() {
  ParamList out{&wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_, &ln1_g_, &ln1_b_,
                &ln2_g_, &ln2_b_, &w1_, &b1_, &w2_, &b2_};
  if (cfg_.cross && cfg_.ln == LnPlacement::kPre) {
    out.push_back(&lnkv_g_);
    out.push_back(&lnkv_b_);
  }
  return out;
}

AlsCoeffs::AlsCoeffs(std::string prefix, int layers, std::int64_t d_model, double init) {
  if (layers < 1) throw ArgumentError("ALS: need at least one layer");
  for (int l = 0; l < layers; ++l) scales_.push_back(constant_init(prefix + "." + std::to_string(l), {d_model}, init));
}

Param& AlsCoeffs::scale(int layer) {
  if (layer < 0 || layer >= layers()) throw ArgumentError("ALS: layer " + std::to_string(layer) + " out of range");
  return scales_[static_cast<std::size_t>(layer)];
}

Var AlsCoeffs::apply(Tape& tape, Var feat, int layer) { return mul_channel(feat, tape.param(scale(layer))); }

ParamList AlsCoeffs::params() {
  ParamList out;
  for (auto& s : scales_) out.push_back(&s);
  return out;
}

namespace {

BlockConfig sva_config(std::int64_t d, std::int64_t heads, AttentionKind kind, bool cross) {
  BlockConfig cfg;
  cfg.d_model = d;
  cfg.ln = LnPlacement::kPre;
  cfg.cross = cross;
  cfg.attention.d_model = d;
  cfg.attention.heads = heads;
  cfg.attention.kind = kind;
  return cfg;
}

}  // namespace

SvaBlock::SvaBlock(std::string prefix, std::int64_t d_model, std::int64_t heads, AttentionKind kind, Rng& rng)
    : self_(prefix + ".self", sva_config(d_model, heads, kind, false), rng),
      cross_(prefix + ".cross", sva_config(d_model, heads, kind, true), rng) {}

SvaStreams SvaBlock::forward(Tape& tape, const SvaStreams& in, const SvaInjection* inject) {
  if (in.srcs.empty()) throw ArgumentError("SVA: no source views");
  SvaStreams out;
  out.ref = self_.forward(tape, in.ref);
  for (const Var& s : in.srcs) out.srcs.push_back(cross_.forward(tape, s, in.ref));
  if (inject) {
    if (inject->feats.size() != in.srcs.size() + 1) {
      throw ArgumentError("SVA: injection needs one feature map per view");
    }
    auto add_feat = [&](Var stream, const Tensor& f) {
      if (!inject->als) return add(stream, tape.constant(f));
      return add(stream, inject->als->apply(tape, tape.constant(normalize_rows(f)), inject->layer));
    };
    out.ref = add_feat(out.ref, inject->feats[0]);
    for (std::size_t i = 0; i < out.srcs.size(); ++i) out.srcs[i] = add_feat(out.srcs[i], inject->feats[i + 1]);
  }
  return out;
}

void SvaBlock::zero_residual_branches() {
  self_.zero_residual_branches();
  cross_.zero_residual_branches();
}

ParamList SvaBlock::params() {
  ParamList out = self_.params();
  for (Param* p : cross_.params()) out.push_back(p);
  return out;
}

}  // namespace deskmvs
