#include "deskmvs/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "deskmvs/numerics/random.hpp"

namespace deskmvs {

namespace {

double evaluate(const std::function<Var(Tape&)>& f) {
  Tape tape(false);
  const Var loss = f(tape);
  if (loss.value().numel() != 1) throw ShapeError("check_gradient: function must return a scalar");
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw NumericError("check_gradient: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult check_gradient(const std::function<Var(Tape&)>& f, const ParamList& params,
                               const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ArgumentError("check_gradient: step must be > 0");
  zero_grads(params);
  {
    Tape tape;
    const Var loss = f(tape);
    if (loss.value().numel() != 1) throw ShapeError("check_gradient: function must return a scalar");
    tape.backward(loss);
  }

  GradCheckResult result;
  Rng rng(options.seed);
  for (Param* p : params) {
    if (!p->trainable) {
      for (double g : p->grad.values()) {
        if (g != 0.0) throw Error("check_gradient: frozen param '" + p->name + "' received gradient");
      }
      continue;
    }
    const Tensor analytic = p->grad;
    std::vector<std::int64_t> coords(static_cast<std::size_t>(p->value.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords > 0 && options.max_coords < p->value.numel()) {
      for (std::int64_t i = 0; i < options.max_coords; ++i) {
        const std::int64_t j = i + rng.index(p->value.numel() - i);
        std::swap(coords[static_cast<std::size_t>(i)], coords[static_cast<std::size_t>(j)]);
      }
      coords.resize(static_cast<std::size_t>(options.max_coords));
    }
    for (std::int64_t idx : coords) {
      const double saved = p->value[idx];
      p->value[idx] = saved + options.step;
      const double up = evaluate(f);
      p->value[idx] = saved - options.step;
      const double down = evaluate(f);
      p->value[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[idx];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_param = p->name;
        result.worst_index = idx;
      }
    }
  }
  return result;
}

}  // namespace deskmvs
