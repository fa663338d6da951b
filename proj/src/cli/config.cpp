#include "deskmvs/cli/config.hpp"

#include <fstream>
#include <sstream>

namespace deskmvs::cli {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ConfigMap ConfigMap::parse(std::string_view text) {
  ConfigMap map;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object()) throw ConfigError("config line " + std::to_string(line_no) + " is not a JSON object");
    map.merge("", obj);
  }
  return map;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void ConfigMap::merge(const std::string& prefix, const json& obj) {
  for (const auto& [k, v] : obj.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      merge(key, v);
    } else {
      values_[key] = v;
    }
  }
}

void ConfigMap::set(const std::string& key, json value) { values_[key] = std::move(value); }

const json* ConfigMap::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

void ConfigMap::reject_unused() const {
  std::string unknown;
  for (const auto& [k, v] : values_) {
    if (used_.count(k) == 0) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
}

std::string ConfigMap::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v.dump() + "\n";
  return out;
}

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "vanilla") return AttentionKind::kVanilla;
  if (s == "linear") return AttentionKind::kLinear;
  throw ConfigError("attention kind must be vanilla or linear, got '" + s + "'");
}

ScalingRule parse_scaling_rule(const std::string& s) {
  if (s == "default") return ScalingRule::kDefault;
  if (s == "aas") return ScalingRule::kAas;
  throw ConfigError("attention scaling must be default or aas, got '" + s + "'");
}

LnPlacement parse_ln_placement(const std::string& s) {
  if (s == "pre") return LnPlacement::kPre;
  if (s == "post") return LnPlacement::kPost;
  throw ConfigError("LN placement must be pre or post, got '" + s + "'");
}

Regularizer parse_regularizer(const std::string& s) {
  if (s == "cvt") return Regularizer::kCvt;
  if (s == "conv3d") return Regularizer::kConv3d;
  throw ConfigError("regularizer must be cvt or conv3d, got '" + s + "'");
}

std::string to_string(AttentionKind k) { return k == AttentionKind::kVanilla ? "vanilla" : "linear"; }
std::string to_string(ScalingRule r) {
  switch (r) {
    case ScalingRule::kDefault:
      return "default";
    case ScalingRule::kAas:
      return "aas";
    case ScalingRule::kFixed:
      return "fixed";
  }
  return "?";
}
std::string to_string(LnPlacement p) { return p == LnPlacement::kPre ? "pre" : "post"; }
std::string to_string(Regularizer r) { return r == Regularizer::kCvt ? "cvt" : "conv3d"; }

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  // The toy stage-0 volume is 16 x 8 x 12, i.e. 48 CVT tokens; AAS is
  // calibrated to that length.
  cfg.model.cvt.mean_length = static_cast<double>(cvt_sequence_length(16, 8, 12));
  return cfg;
}

namespace {

std::vector<StageConfig> parse_stages(const json& arr) {
  if (!arr.is_array() || arr.empty()) throw ConfigError("model.stages must be a non-empty array");
  std::vector<StageConfig> out;
  for (const auto& s : arr) {
    if (!s.is_object()) throw ConfigError("model.stages entries must be objects");
    StageConfig st;
    try {
      st.scale = s.value("scale", st.scale);
      st.hypotheses = s.value("hypotheses", st.hypotheses);
      st.regularizer = parse_regularizer(s.value("regularizer", std::string("conv3d")));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model.stages: ") + e.what());
    }
    out.push_back(st);
  }
  return out;
}

}  // namespace

ExperimentConfig experiment_from(const ConfigMap& m, ExperimentConfig c) {
  auto& sc = c.scene;
  sc.views = m.get("scene.views", sc.views);
  sc.height = m.get("scene.height", sc.height);
  sc.width = m.get("scene.width", sc.width);
  if (m.contains("scene.geometry")) sc.geometry = parse_geometry(m.get<std::string>("scene.geometry", ""));
  sc.focal_norm = m.get("scene.focal_norm", sc.focal_norm);
  sc.arc_min_deg = m.get("scene.arc_min_deg", sc.arc_min_deg);
  sc.arc_max_deg = m.get("scene.arc_max_deg", sc.arc_max_deg);
  sc.relief = m.get("scene.relief", sc.relief);
  sc.texture_period = m.get("scene.texture_period", sc.texture_period);
  sc.low_texture = m.get("scene.low_texture", sc.low_texture);
  sc.image_noise = m.get("scene.image_noise", sc.image_noise);
  if (m.contains("scene.plane_depth")) sc.plane_depth = m.get("scene.plane_depth", 0.0);

  auto& d = c.data;
  d.train = m.get("data.train", d.train);
  d.val = m.get("data.val", d.val);
  d.seed = m.get("data.seed", d.seed);
  if (m.contains("data.dir")) d.dir = m.get<std::string>("data.dir", "");

  auto& md = c.model;
  if (const json* st = m.find("model.stages")) md.stages = parse_stages(*st);
  md.groups = m.get("model.groups", md.groups);
  md.refine_window = m.get("model.refine_window", md.refine_window);
  if (m.contains("model.refine_upsample")) {
    const auto mode = m.get<std::string>("model.refine_upsample", "");
    if (mode != "nearest" && mode != "bilinear") throw ConfigError("model.refine_upsample must be nearest or bilinear");
    md.refine_upsample = mode == "nearest" ? UpsampleMode::kNearest : UpsampleMode::kBilinear;
  }
  md.temperature = m.get("model.temperature", md.temperature);
  md.conv3d_hidden = m.get("model.conv3d_hidden", md.conv3d_hidden);
  auto& cvt = md.cvt;
  cvt.layers = m.get("model.cvt.layers", cvt.layers);
  cvt.heads = m.get("model.cvt.heads", cvt.heads);
  if (m.contains("model.cvt.ln")) cvt.ln = parse_ln_placement(m.get<std::string>("model.cvt.ln", ""));
  if (m.contains("model.cvt.attention")) cvt.kind = parse_attention_kind(m.get<std::string>("model.cvt.attention", ""));
  if (m.contains("model.cvt.scaling")) cvt.scaling = parse_scaling_rule(m.get<std::string>("model.cvt.scaling", ""));
  cvt.mean_length = m.get("model.cvt.mean_length", cvt.mean_length);
  cvt.fpe = m.get("model.cvt.fpe", cvt.fpe);
  cvt.cost_skip = m.get("model.cvt.cost_skip", cvt.cost_skip);
  auto& f = md.features;
  f.sva = m.get("model.features.sva", f.sva);
  f.norm_als = m.get("model.features.norm_als", f.norm_als);
  f.coarse_channels = m.get("model.features.coarse_channels", f.coarse_channels);
  f.fine_channels = m.get("model.features.fine_channels", f.fine_channels);
  f.sva_heads = m.get("model.features.sva_heads", f.sva_heads);
  if (m.contains("model.features.sva_attention")) {
    f.sva_attention = parse_attention_kind(m.get<std::string>("model.features.sva_attention", ""));
  }

  auto& t = c.train;
  t.steps = m.get("train.steps", t.steps);
  t.lr = m.get("train.lr", t.lr);
  t.warmup_steps = m.get("train.warmup_steps", t.warmup_steps);
  t.final_lr_ratio = m.get("train.final_lr_ratio", t.final_lr_ratio);
  t.clip_norm = m.get("train.clip_norm", t.clip_norm);
  t.batch = m.get("train.batch", t.batch);

  sc.validate();
  md.validate();
  if (d.train < 1 || d.val < 1) throw ConfigError("data.train and data.val must be >= 1");
  if (t.steps < 0 || t.lr <= 0.0 || t.batch < 1 || t.warmup_steps < 0) {
    throw ConfigError("train: steps >= 0, lr > 0, batch >= 1, warmup_steps >= 0");
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json stages = json::array();
  for (const auto& s : c.model.stages) {
    stages.push_back({{"scale", s.scale}, {"hypotheses", s.hypotheses}, {"regularizer", to_string(s.regularizer)}});
  }
  const auto& sc = c.scene;
  json scene = {{"views", sc.views},          {"height", sc.height},
                {"width", sc.width},          {"geometry", geometry_name(sc.geometry)},
                {"focal_norm", sc.focal_norm}, {"arc_min_deg", sc.arc_min_deg},
                {"arc_max_deg", sc.arc_max_deg}, {"relief", sc.relief},
                {"texture_period", sc.texture_period}, {"low_texture", sc.low_texture},
                {"image_noise", sc.image_noise}};
  if (sc.plane_depth) scene["plane_depth"] = *sc.plane_depth;
  json data = {{"train", c.data.train}, {"val", c.data.val}, {"seed", c.data.seed}};
  if (c.data.dir) data["dir"] = c.data.dir->string();
  const auto& md = c.model;
  return {
      {"scene", scene},
      {"data", data},
      {"model",
       {{"stages", stages},
        {"groups", md.groups},
        {"refine_window", md.refine_window},
        {"refine_upsample", md.refine_upsample == UpsampleMode::kNearest ? "nearest" : "bilinear"},
        {"temperature", md.temperature},
        {"conv3d_hidden", md.conv3d_hidden},
        {"cvt",
         {{"layers", md.cvt.layers},
          {"heads", md.cvt.heads},
          {"ln", to_string(md.cvt.ln)},
          {"attention", to_string(md.cvt.kind)},
          {"scaling", to_string(md.cvt.scaling)},
          {"mean_length", md.cvt.mean_length},
          {"fpe", md.cvt.fpe},
          {"cost_skip", md.cvt.cost_skip}}},
        {"features",
         {{"sva", md.features.sva},
          {"norm_als", md.features.norm_als},
          {"coarse_channels", md.features.coarse_channels},
          {"fine_channels", md.features.fine_channels},
          {"sva_heads", md.features.sva_heads},
          {"sva_attention", to_string(md.features.sva_attention)}}}}},
      {"train",
       {{"steps", c.train.steps},
        {"lr", c.train.lr},
        {"warmup_steps", c.train.warmup_steps},
        {"final_lr_ratio", c.train.final_lr_ratio},
        {"clip_norm", c.train.clip_norm},
        {"batch", c.train.batch}}},
  };
}

}  // namespace deskmvs::cli
