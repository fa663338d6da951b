#include "deskmvs/numerics/init.hpp"

#include <cmath>

namespace deskmvs {

Param affine_init(std::string name, Shape shape, std::int64_t fan_in, Rng& rng) {
  if (fan_in < 1) throw ArgumentError("affine_init: fan_in must be >= 1");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Param(std::move(name), rng.uniform_tensor(std::move(shape), -bound, bound));
}

Param constant_init(std::string name, Shape shape, double value, bool trainable) {
  return Param(std::move(name), Tensor(std::move(shape), value), trainable);
}

}  // namespace deskmvs
