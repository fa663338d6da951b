#pragma once

#include <cstdint>
#include <unordered_map>

#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; <= 0 disables it.
  double clip_norm = 0.0;
};

// Adam over a fixed parameter list. Frozen params are skipped entirely, so
// their values never change.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options);

  void step();
  void zero_grad() { zero_grads(params_); }
  std::int64_t steps() const noexcept { return t_; }
  AdamOptions& options() noexcept { return options_; }

 private:
  struct Moments {
    Tensor m, v;
  };
  ParamList params_;
  AdamOptions options_;
  std::unordered_map<const Param*, Moments> state_;
  std::int64_t t_ = 0;
};

}  // namespace deskmvs
