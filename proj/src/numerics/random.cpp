#include "deskmvs/numerics/random.hpp"

namespace deskmvs {

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(lo, hi);
  return t;
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = normal(0.0, stddev);
  return t;
}

}  // namespace deskmvs
