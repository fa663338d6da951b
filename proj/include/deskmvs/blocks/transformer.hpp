#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deskmvs/attention/attention.hpp"
#include "deskmvs/numerics/random.hpp"

namespace deskmvs {

enum class LnPlacement { kPre, kPost };

struct BlockConfig {
  std::int64_t d_model = 64;
  std::int64_t ffn_expansion = 4;
  LnPlacement ln = LnPlacement::kPre;
  AttentionConfig attention;
  // Cross-attention blocks take queries from x and keys/values from kv.
  bool cross = false;

  void validate() const;
};

// Pre-LN:  x += Attn(LN x);  x += FFN(LN x)
// Post-LN: x = LN(x + Attn x);  x = LN(x + FFN x)
// FFN is affine -> GELU -> affine. In a Pre-LN cross block kv gets its own LN.
class TransformerBlock {
 public:
  TransformerBlock(std::string prefix, BlockConfig cfg, Rng& rng);

  // x [n, d]; kv [m, d] is required exactly when the block is a cross block.
  Var forward(Tape& tape, Var x, std::optional<Var> kv = std::nullopt);

  // Zeroes the attention output projection and the second FFN affine.
  void zero_residual_branches();
  ParamList params();
  const BlockConfig& config() const noexcept { return cfg_; }

 private:
  Var attention(Tape& tape, Var xq, Var xkv);
  Var ffn(Tape& tape, Var x);

  BlockConfig cfg_;
  Param wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Param ln1_g_, ln1_b_, ln2_g_, ln2_b_, lnkv_g_, lnkv_b_;
  Param w1_, b1_, w2_, b2_;
};

// Learnable per-layer channel scales for normalised frozen features.
class AlsCoeffs {
 public:
  AlsCoeffs(std::string prefix, int layers, std::int64_t d_model, double init = 0.5);

  // feat [n, d], already layer-normalised.
  Var apply(Tape& tape, Var feat, int layer);
  int layers() const noexcept { return static_cast<int>(scales_.size()); }
  Param& scale(int layer);
  ParamList params();

 private:
  std::vector<Param> scales_;
};

struct SvaStreams {
  Var ref;
  std::vector<Var> srcs;
};

// Frozen features from the next backbone layer, one [n, d] tensor per view
// (reference first), added to the block outputs. With `als` set they are
// layer-normalised and ALS-scaled first; without it they are added raw.
struct SvaInjection {
  std::span<const Tensor> feats;
  AlsCoeffs* als = nullptr;
  int layer = 0;
};

// Reference stream: self-attention block. Each source stream: cross-attention
// block with the (incoming) reference as keys/values. Both Pre-LN.
class SvaBlock {
 public:
  SvaBlock(std::string prefix, std::int64_t d_model, std::int64_t heads, AttentionKind kind, Rng& rng);

  SvaStreams forward(Tape& tape, const SvaStreams& in, const SvaInjection* inject = nullptr);
  void zero_residual_branches();
  ParamList params();

 private:
  TransformerBlock self_;
  TransformerBlock cross_;
};

}  // namespace deskmvs
