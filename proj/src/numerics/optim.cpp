#include "deskmvs/numerics/optim.hpp"

#include <cmath>

namespace deskmvs {

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  if (!(options_.lr > 0.0)) throw ArgumentError("Adam: lr must be > 0");
  for (const Param* p : params_) {
    if (p->trainable) state_.emplace(p, Moments{Tensor::zeros_like(p->value), Tensor::zeros_like(p->value)});
  }
}

void Adam::step() {
  ++t_;
  double clip = 1.0;
  if (options_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Param* p : params_) {
      if (!p->trainable) continue;
      for (double g : p->grad.values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > options_.clip_norm) clip = options_.clip_norm / norm;
  }
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (Param* p : params_) {
    if (!p->trainable) continue;
    require_finite(p->grad, "gradient of " + p->name);
    auto& st = state_.at(p);
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i] * clip;
      st.m[i] = options_.beta1 * st.m[i] + (1.0 - options_.beta1) * g;
      st.v[i] = options_.beta2 * st.v[i] + (1.0 - options_.beta2) * g * g;
      p->value[i] -= options_.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + options_.eps);
    }
    if (p->value.dtype() == DType::kFloat32) p->value.set_dtype(DType::kFloat32);
  }
}

}  // namespace deskmvs
