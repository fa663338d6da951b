#include "deskmvs/attention/attention.hpp"

#include <cmath>

namespace deskmvs {

namespace {
thread_local ScaleProbe* active_probe = nullptr;
}

void AttentionConfig::validate() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw ArgumentError("attention: d_model " + std::to_string(d_model) + " not divisible into " +
                        std::to_string(heads) + " heads");
  }
  if (scaling == ScalingRule::kAas && !(mean_length > 1.0)) throw ArgumentError("attention: AAS mean length must be > 1");
  if (scaling == ScalingRule::kFixed && !(fixed_scale > 0.0)) throw ArgumentError("attention: fixed scale must be > 0");
}

double AttentionConfig::scale_for(std::int64_t keys) const {
  const auto d = static_cast<double>(head_dim());
  switch (scaling) {
    case ScalingRule::kDefault:
      return 1.0 / std::sqrt(d);
    case ScalingRule::kAas:
      return aas_scale(static_cast<double>(keys), d, mean_length);
    case ScalingRule::kFixed:
      return fixed_scale;
  }
  throw ArgumentError("attention: unknown scaling rule");
}

double aas_scale(double n, double d, double mean_length) {
  if (n < 2.0 || mean_length < 2.0) throw ArgumentError("aas_scale: lengths must be >= 2");
  if (d < 1.0) throw ArgumentError("aas_scale: head dim must be >= 1");
  return std::log(n) / (std::sqrt(d) * std::log(mean_length));
}

Tensor attention_entropy(const Tensor& probs) {
  if (probs.rank() == 0) throw ShapeError("attention_entropy: needs rank >= 1");
  const std::int64_t n = probs.dim(-1);
  Shape out_shape(probs.shape().begin(), probs.shape().end() - 1);
  Tensor out(out_shape);
  const std::int64_t rows = out.numel();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* p = probs.data() + r * n;
    double total = 0.0, h = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      if (p[j] < 0.0) throw ArgumentError("attention_entropy: negative probability");
      total += p[j];
      if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    }
    if (std::abs(total - 1.0) > 1e-4) throw ArgumentError("attention_entropy: row does not sum to 1");
    out[r] = h;
  }
  return out;
}

Var vanilla_attention(Var q, Var k, Var v, const AttentionConfig& cfg) {
  cfg.validate();
  if (cfg.kind != AttentionKind::kVanilla) throw ArgumentError("vanilla_attention: config is not vanilla");
  const std::int64_t keys = k.value().rank() == 3 ? k.dim(1) : 0;
  const double s = cfg.scale_for(keys);
  ScaleProbe::notify(keys, s);
  return attention_softmax(q, k, v, s);
}

Var linear_attention(Var q, Var k, Var v, const AttentionConfig& cfg) {
  cfg.validate();
  if (cfg.kind != AttentionKind::kLinear) throw ArgumentError("linear_attention: config is not linear");
  return attention_linear(q, k, v, kLinearAttentionEps);
}

Var attend(Var q, Var k, Var v, const AttentionConfig& cfg) {
  return cfg.kind == AttentionKind::kVanilla ? vanilla_attention(q, k, v, cfg) : linear_attention(q, k, v, cfg);
}

ScaleProbe::ScaleProbe() : previous_(active_probe) { active_probe = this; }

ScaleProbe::~ScaleProbe() { active_probe = previous_; }

void ScaleProbe::notify(std::int64_t keys, double scale) {
  if (active_probe) active_probe->records_.push_back({keys, scale});
}

}  // namespace deskmvs
