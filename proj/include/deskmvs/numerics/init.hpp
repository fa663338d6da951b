#pragma once

#include <string>

#include "deskmvs/numerics/random.hpp"
#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

// Uniform in +-1/sqrt(fan_in).
Param affine_init(std::string name, Shape shape, std::int64_t fan_in, Rng& rng);
Param constant_init(std::string name, Shape shape, double value, bool trainable = true);

}  // namespace deskmvs
