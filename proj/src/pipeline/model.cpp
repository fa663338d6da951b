#include "deskmvs/pipeline/model.hpp"

#include <algorithm>
#include <cmath>

#include "deskmvs/encodings/positional.hpp"
#include "deskmvs/geometry/warp.hpp"
#include "deskmvs/numerics/init.hpp"

namespace deskmvs {

namespace {

Param frozen(Param p) {
  p.trainable = false;
  return p;
}

Tensor average_pool2(const Tensor& img) {
  const std::int64_t c = img.dim(0), h = img.dim(1) / 2, w = img.dim(2) / 2, iw = img.dim(2);
  Tensor out({c, h, w});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* src = img.data() + ch * img.dim(1) * iw;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        out[(ch * h + y) * w + x] = 0.25 * (src[2 * y * iw + 2 * x] + src[2 * y * iw + 2 * x + 1] +
                                            src[(2 * y + 1) * iw + 2 * x] + src[(2 * y + 1) * iw + 2 * x + 1]);
      }
    }
  }
  return out;
}

// [C,H,W] map <-> [H*W, C] tokens.
Var to_tokens(Var map) {
  const auto& s = map.shape();
  return transpose(reshape(map, {s[0], s[1] * s[2]}));
}

Var to_map(Var tokens, std::int64_t h, std::int64_t w) { return reshape(transpose(tokens), {tokens.dim(1), h, w}); }

constexpr std::array<std::int64_t, 2> kPyramidWidths{16, 32};

// Zero mean, unit variance per channel.
Tensor standardize_image(const Tensor& image) {
  Tensor out = image;
  const std::int64_t np = image.dim(1) * image.dim(2);
  for (std::int64_t c = 0; c < image.dim(0); ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::int64_t p = 0; p < np; ++p) mean += image[c * np + p];
    mean /= static_cast<double>(np);
    for (std::int64_t p = 0; p < np; ++p) sq += (image[c * np + p] - mean) * (image[c * np + p] - mean);
    const double inv = 1.0 / std::sqrt(sq / static_cast<double>(np) + 1e-6);
    for (std::int64_t p = 0; p < np; ++p) out[c * np + p] = (image[c * np + p] - mean) * inv;
  }
  return out;
}

Tensor tokens_of(const Tensor& map) {
  const std::int64_t c = map.dim(0), n = map.dim(1) * map.dim(2);
  Tensor out({n, c});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < n; ++i) out[i * c + ch] = map[ch * n + i];
  }
  return out;
}

}  // namespace

// ---- backbone ---------------------------------------------------------------------

BackboneStub::BackboneStub(BackboneConfig cfg) : cfg_(cfg) {
  if (cfg_.dim < 1 || cfg_.layers < 1) throw ConfigError("backbone: bad dimensions");
  for (int t : cfg_.taps) {
    if (t < 0 || t >= cfg_.layers) throw ConfigError("backbone: tap layer out of range");
  }
  Rng rng(cfg_.seed);
  const std::int64_t d = cfg_.dim;
  embed_w_ = frozen(affine_init("backbone.embed.w", {d, 3, 16, 16}, 3 * 256, rng));
  embed_b_ = frozen(affine_init("backbone.embed.b", {d}, 3 * 256, rng));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string n = "backbone.layer" + std::to_string(l);
    layer_w_.push_back(frozen(affine_init(n + ".w", {d, d, 3, 3}, d * 9, rng)));
    layer_b_.push_back(frozen(affine_init(n + ".b", {d}, d * 9, rng)));
  }
}

std::vector<Tensor> BackboneStub::forward(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("backbone: image must be [3,H,W]");
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw ShapeError("backbone: image extents " + shape_string(image.shape()) + " not divisible by 32");
  }
  Tape tape(false);
  Var x = conv2d(tape.constant(average_pool2(image)), tape.param(embed_w_), tape.param(embed_b_), 16, 0);
  std::vector<Tensor> taps;
  for (int l = 0; l < cfg_.layers; ++l) {
    x = add(x, gelu(conv2d(x, tape.param(layer_w_[l]), tape.param(layer_b_[l]), 1, 1)));
    if (std::find(cfg_.taps.begin(), cfg_.taps.end(), l) != cfg_.taps.end()) taps.push_back(x.value());
  }
  return taps;
}

ParamList BackboneStub::params() {
  ParamList out{&embed_w_, &embed_b_};
  for (std::size_t l = 0; l < layer_w_.size(); ++l) {
    out.push_back(&layer_w_[l]);
    out.push_back(&layer_b_[l]);
  }
  return out;
}

std::vector<Tensor> backbone_stub_forward(BackboneStub& backbone, const Tensor& image) {
  return backbone.forward(image);
}

// ---- features ---------------------------------------------------------------------

FeatureNet::FeatureNet(std::string prefix, FeatureConfig cfg, std::int64_t backbone_dim, int taps, Rng& rng)
    : cfg_(cfg), backbone_dim_(backbone_dim) {
  const std::int64_t cc = cfg_.coarse_channels, cf = cfg_.fine_channels, db = backbone_dim;
  auto w = [&](const std::string& n, Shape s, std::int64_t fan) { return affine_init(prefix + n, std::move(s), fan, rng); };
  const std::array<std::int64_t, 4> widths{3, kPyramidWidths[0], kPyramidWidths[1], cc};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string lv = ".pyr" + std::to_string(l);
    down_w_[l] = w(lv + ".down.w", {widths[l + 1], widths[l], 3, 3}, widths[l] * 9);
    down_b_[l] = w(lv + ".down.b", {widths[l + 1]}, widths[l] * 9);
    refine_w_[l] = w(lv + ".refine.w", {widths[l + 1], widths[l + 1], 3, 3}, widths[l + 1] * 9);
    refine_b_[l] = w(lv + ".refine.b", {widths[l + 1]}, widths[l + 1] * 9);
  }
  fuse_w_ = w(".fuse.w", {cc, db + cc, 1, 1}, db + cc);
  fuse_b_ = w(".fuse.b", {cc}, db + cc);
  top_w_ = w(".top.w", {cf, cc, 1, 1}, cc);
  top_b_ = w(".top.b", {cf}, cc);
  lat_w_ = w(".lat.w", {cf, kPyramidWidths[1], 1, 1}, kPyramidWidths[1]);
  lat_b_ = w(".lat.b", {cf}, kPyramidWidths[1]);
  smooth_w_ = w(".smooth.w", {cf, cf, 3, 3}, cf * 9);
  smooth_b_ = w(".smooth.b", {cf}, cf * 9);
  if (cfg_.norm_als) als_ = std::make_unique<AlsCoeffs>(prefix + ".als", taps, db);
  if (cfg_.sva) {
    for (int i = 0; i + 1 < taps; ++i) {
      coarse_sva_.push_back(std::make_unique<SvaBlock>(prefix + ".sva_vit" + std::to_string(i), db, cfg_.sva_heads,
                                                       cfg_.sva_attention, rng));
    }
    for (int i = 0; i < cfg_.fine_sva_blocks; ++i) {
      fine_sva_.push_back(std::make_unique<SvaBlock>(prefix + ".sva_fine" + std::to_string(i), cc, cfg_.sva_heads,
                                                     cfg_.sva_attention, rng));
    }
  }
}

Var FeatureNet::backbone_tokens(Tape& tape, const Tensor& tap, int layer) {
  const Tensor tokens = tokens_of(tap);
  if (!als_) return tape.constant(tokens);
  return als_->apply(tape, tape.constant(normalize_rows(tokens)), layer);
}

ViewFeatures FeatureNet::forward(Tape& tape, std::span<const Tensor> images,
                                 const std::vector<std::vector<Tensor>>& taps) {
  const auto views = images.size();
  if (views < 2 || taps.size() != views) throw ArgumentError("feature net: need >= 2 views with backbone taps");
  std::vector<Var> c2(views), c3(views);
  for (std::size_t v = 0; v < views; ++v) {
    Var x = tape.constant(standardize_image(images[v]));
    for (std::size_t l = 0; l < 3; ++l) {
      x = gelu(conv2d(x, tape.param(down_w_[l]), tape.param(down_b_[l]), 2, 1));
      x = add(x, gelu(conv2d(x, tape.param(refine_w_[l]), tape.param(refine_b_[l]), 1, 1)));
      if (l == 1) c2[v] = x;
    }
    c3[v] = x;
  }
  const int n_taps = static_cast<int>(taps[0].size());
  const std::int64_t hb = taps[0][0].dim(1), wb = taps[0][0].dim(2);

  std::vector<Var> vit(views);
  if (cfg_.sva) {
    SvaStreams s;
    s.ref = backbone_tokens(tape, taps[0][0], 0);
    for (std::size_t v = 1; v < views; ++v) s.srcs.push_back(backbone_tokens(tape, taps[v][0], 0));
    for (int b = 0; b < static_cast<int>(coarse_sva_.size()) && b + 1 < n_taps; ++b) {
      std::vector<Tensor> next;
      for (std::size_t v = 0; v < views; ++v) next.push_back(tokens_of(taps[v][b + 1]));
      SvaInjection inj{next, als_.get(), b + 1};
      s = coarse_sva_[b]->forward(tape, s, &inj);
    }
    vit[0] = s.ref;
    for (std::size_t v = 1; v < views; ++v) vit[v] = s.srcs[v - 1];
  } else {
    for (std::size_t v = 0; v < views; ++v) vit[v] = backbone_tokens(tape, taps[v].back(), n_taps - 1);
  }

  ViewFeatures out;
  const std::int64_t h8 = c3[0].dim(1), w8 = c3[0].dim(2);
  if (hb * 4 != h8 || wb * 4 != w8) throw ShapeError("feature net: backbone grid does not align with 1/8 features");
  for (std::size_t v = 0; v < views; ++v) {
    Var up = upsample_nearest(to_map(vit[v], hb, wb), 4);
    const std::array<Var, 2> parts{up, c3[v]};
    out.coarse.push_back(conv2d(concat(parts, 0), tape.param(fuse_w_), tape.param(fuse_b_), 1, 0));
  }
  if (cfg_.sva) {
    Var pe = tape.constant(normalized_pe_2d(h8, w8, cfg_.coarse_channels));
    SvaStreams s;
    s.ref = to_tokens(add(out.coarse[0], pe));
    for (std::size_t v = 1; v < views; ++v) s.srcs.push_back(to_tokens(add(out.coarse[v], pe)));
    for (auto& block : fine_sva_) s = block->forward(tape, s);
    out.coarse[0] = to_map(s.ref, h8, w8);
    for (std::size_t v = 1; v < views; ++v) out.coarse[v] = to_map(s.srcs[v - 1], h8, w8);
  }
  for (std::size_t v = 0; v < views; ++v) {
    Var top = upsample_nearest(conv2d(out.coarse[v], tape.param(top_w_), tape.param(top_b_), 1, 0), 2);
    Var lat = conv2d(c2[v], tape.param(lat_w_), tape.param(lat_b_), 1, 0);
    out.fine.push_back(conv2d(add(top, lat), tape.param(smooth_w_), tape.param(smooth_b_), 1, 1));
  }
  return out;
}

ParamList FeatureNet::params() {
  ParamList out;
  for (std::size_t l = 0; l < 3; ++l) {
    for (Param* p : {&down_w_[l], &down_b_[l], &refine_w_[l], &refine_b_[l]}) out.push_back(p);
  }
  for (Param* p : {&fuse_w_, &fuse_b_, &top_w_, &top_b_, &lat_w_, &lat_b_, &smooth_w_, &smooth_b_}) out.push_back(p);
  if (als_) {
    for (Param* p : als_->params()) out.push_back(p);
  }
  for (auto* list : {&coarse_sva_, &fine_sva_}) {
    for (auto& b : *list) {
      for (Param* p : b->params()) out.push_back(p);
    }
  }
  return out;
}

// ---- cost volume -------------------------------------------------------------------

CostVolume build_cost_volume(Var ref_feat, std::span<const Var> src_feats, const Camera& ref_cam,
                             std::span<const Camera> src_cams, const Tensor& hypotheses, std::int64_t groups,
                             int stage) {
  if (src_feats.empty()) throw ArgumentError("build_cost_volume: no source views");
  if (src_feats.size() != src_cams.size()) throw ArgumentError("build_cost_volume: one camera per source view");
  if (hypotheses.rank() != 3 || hypotheses.dim(1) != ref_feat.dim(1) || hypotheses.dim(2) != ref_feat.dim(2)) {
    throw ShapeError("build_cost_volume: hypotheses " + shape_string(hypotheses.shape()) + " vs features " +
                     shape_string(ref_feat.shape()));
  }
  std::vector<Tensor> coords;
  for (const auto& cam : src_cams) coords.push_back(plane_sweep_coords(ref_cam, cam, hypotheses));
  CorrelationVolume cv = group_correlation(ref_feat, src_feats, coords, groups);
  return {cv.scores, std::move(cv.valid), hypotheses, stage};
}

// ---- cascade -------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (stages.empty() || stages.size() > 2) throw ConfigError("model: 1 or 2 cascade stages are supported");
  const double supported[2] = {0.125, 0.25};
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].scale != supported[s]) {
      throw ConfigError("model: stage " + std::to_string(s) + " must run at scale " + std::to_string(supported[s]));
    }
    if (stages[s].hypotheses < 2) throw ConfigError("model: a stage needs at least 2 hypotheses");
    if (s > 0 && stages[s].regularizer == Regularizer::kCvt) {
      throw ConfigError("model: the cost-volume transformer is only allowed on stage 0, requested on stage " +
                        std::to_string(s));
    }
  }
  if (groups < 1 || features.coarse_channels % groups != 0 || features.fine_channels % groups != 0) {
    throw ConfigError("model: groups must divide the feature channels");
  }
  if (features.coarse_channels % 4 != 0) throw ConfigError("model: coarse channels must be a multiple of 4");
  if (features.sva && (backbone.dim % features.sva_heads != 0 || features.coarse_channels % features.sva_heads != 0)) {
    throw ConfigError("model: SVA heads must divide the feature widths");
  }
  if (stages[0].regularizer == Regularizer::kCvt) {
    if (stages[0].hypotheses % cvt.stride.d != 0) throw ConfigError("model: CVT needs D divisible by its depth stride");
    if (cvt.channels % cvt.heads != 0) throw ConfigError("model: CVT heads must divide its channels");
    if (cvt.scaling == ScalingRule::kAas && !(cvt.mean_length >= 2.0)) {
      throw ConfigError("model: AAS mean length must be >= 2");
    }
  }
  if (!(refine_window > 0.0)) throw ConfigError("model: refine_window must be > 0");
  if (!(temperature > 0.0)) throw ConfigError("model: temperature must be > 0");
}

MvsModel::MvsModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), backbone_((cfg_.validate(), cfg_.backbone)) {
  Rng rng(seed);
  features_ = std::make_unique<FeatureNet>("feat", cfg_.features, cfg_.backbone.dim,
                                           static_cast<int>(cfg_.backbone.taps.size()), rng);
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    const auto& st = cfg_.stages[s];
    if (st.regularizer == Regularizer::kCvt) {
      CvtConfig c = cfg_.cvt;
      c.groups = cfg_.groups;
      cvt_ = std::make_unique<CostVolumeTransformer>("cvt", c, rng);
      conv_regs_.push_back(nullptr);
    } else {
      conv_regs_.push_back(
          std::make_unique<Conv3dRegularizer>("stage" + std::to_string(s) + ".reg", cfg_.groups, cfg_.conv3d_hidden, rng));
    }
  }
}

ParamList MvsModel::trainable_params() {
  ParamList out = features_->params();
  if (cvt_) {
    for (Param* p : cvt_->params()) out.push_back(p);
  }
  for (auto& r : conv_regs_) {
    if (!r) continue;
    for (Param* p : r->params()) out.push_back(p);
  }
  return out;
}

ParamList MvsModel::params() {
  ParamList out = trainable_params();
  for (Param* p : backbone_.params()) out.push_back(p);
  return out;
}

std::vector<StagePrediction> MvsModel::forward(Tape& tape, const SceneSample& sample) {
  const auto views = static_cast<std::size_t>(sample.views());
  if (views < 2) throw ArgumentError("cascade: need at least 2 views");
  std::vector<std::vector<Tensor>> taps;
  for (const auto& img : sample.images) taps.push_back(backbone_.forward(img));
  const ViewFeatures feats = features_->forward(tape, sample.images, taps);
  const Camera& ref_full = sample.cameras.front();

  std::vector<StagePrediction> preds;
  double inverse_step0 = 0.0;
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    const StageConfig& st = cfg_.stages[s];
    const std::vector<Var>& maps = s == 0 ? feats.coarse : feats.fine;
    const std::int64_t h = maps[0].dim(1), w = maps[0].dim(2);

    StagePrediction pred;
    pred.stage = static_cast<int>(s);
    pred.scale = st.scale;
    pred.camera = ref_full.scaled(st.scale);
    std::vector<Camera> src_cams;
    for (std::size_t v = 1; v < views; ++v) src_cams.push_back(sample.cameras[v].scaled(st.scale));

    DepthHypotheses global;
    if (s == 0) {
      global = inverse_depth_hypotheses(ref_full.d_near, ref_full.d_far, st.hypotheses);
      inverse_step0 = global.inverse_step();
      pred.hypotheses = hypothesis_volume(global, h, w);
    } else {
      const StagePrediction& prev = preds.back();
      const Tensor centre = upsample_depth(prev.depth, st.scale / prev.scale, h, w, cfg_.refine_upsample);
      const double span = cfg_.refine_window * inverse_step0 * std::pow(0.5, static_cast<double>(s - 1));
      pred.hypotheses = refine_hypotheses(centre, ref_full.d_near, ref_full.d_far, st.hypotheses, span);
    }

    const std::span<const Var> srcs(maps.data() + 1, views - 1);
    const CostVolume cv = build_cost_volume(maps[0], srcs, pred.camera, src_cams, pred.hypotheses, cfg_.groups,
                                            static_cast<int>(s));
    if (st.regularizer == Regularizer::kCvt) {
      pred.logits = cvt_->forward(tape, cv.scores, pred.camera, global, static_cast<int>(s));
    } else {
      pred.logits = conv_regs_[s]->forward(tape, cv.scores);
    }
    pred.depth = depth_expectation(pred.logits.value(), pred.hypotheses, cfg_.temperature);
    pred.confidence = depth_confidence(pred.logits.value(), cfg_.temperature);
    preds.push_back(std::move(pred));
  }
  return preds;
}

std::vector<StagePrediction> cascade_forward(Tape& tape, MvsModel& model, const SceneSample& sample) {
  return model.forward(tape, sample);
}

std::pair<Tensor, Tensor> stage_ground_truth(const SceneSample& sample, const StagePrediction& pred) {
  return sample_depth_map(sample.depth, sample.depth_mask, pred.scale, pred.depth.dim(0), pred.depth.dim(1));
}

Var cascade_loss(const std::vector<StagePrediction>& preds, const SceneSample& sample) {
  std::optional<Var> total;
  for (const auto& pred : preds) {
    const auto [gt, mask] = stage_ground_truth(sample, pred);
    if (depth_labels(gt, mask, pred.hypotheses).valid == 0) continue;
    Var l = ce_depth_loss(pred.logits, gt, pred.hypotheses, mask);
    total = total ? add(*total, l) : l;
  }
  if (!total) throw ArgumentError("cascade_loss: no stage has a labelled pixel");
  return *total;
}

}  // namespace deskmvs
