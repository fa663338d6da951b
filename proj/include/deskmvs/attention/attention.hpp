#pragma once

#include <cstdint>
#include <vector>

#include "deskmvs/numerics/ops.hpp"

namespace deskmvs {

enum class AttentionKind { kVanilla, kLinear };
enum class ScalingRule { kDefault, kAas, kFixed };

// Mean key length the AAS rule is calibrated to when nothing else is given.
inline constexpr double kDefaultMeanLength = 12186.0;

struct AttentionConfig {
  std::int64_t d_model = 64;
  std::int64_t heads = 8;
  AttentionKind kind = AttentionKind::kVanilla;
  ScalingRule scaling = ScalingRule::kDefault;
  double mean_length = kDefaultMeanLength;  // AAS only
  double fixed_scale = 0.0;                 // kFixed only

  std::int64_t head_dim() const { return d_model / heads; }
  void validate() const;
  // Logit scale applied for a call with `keys` keys (vanilla attention).
  double scale_for(std::int64_t keys) const;
};

// log n / (sqrt(d) log mean_length), natural logs.
double aas_scale(double n, double d, double mean_length);

// Per-row -sum p log p over the trailing axis (0 log 0 = 0). Rows must sum to 1
// within 1e-4.
Tensor attention_entropy(const Tensor& probs);

// q [h, nq, dh], k/v [h, nk, dh].
Var vanilla_attention(Var q, Var k, Var v, const AttentionConfig& cfg);
Var linear_attention(Var q, Var k, Var v, const AttentionConfig& cfg);
// Dispatches on cfg.kind.
Var attend(Var q, Var k, Var v, const AttentionConfig& cfg);

// Records (key count, scale) for every vanilla attention call on this thread
// while alive. Probes nest; the innermost one receives the records.
class ScaleProbe {
 public:
  struct Record {
    std::int64_t keys;
    double scale;
  };

  ScaleProbe();
  ~ScaleProbe();
  ScaleProbe(const ScaleProbe&) = delete;
  ScaleProbe& operator=(const ScaleProbe&) = delete;

  const std::vector<Record>& records() const noexcept { return records_; }
  static void notify(std::int64_t keys, double scale);

 private:
  std::vector<Record> records_;
  ScaleProbe* previous_;
};

}  // namespace deskmvs
