#pragma once

#include <cstdint>
#include <random>

#include "deskmvs/numerics/tensor.hpp"

namespace deskmvs {

// Seeded generator. Everything random in the library draws from one of these,
// so a (seed, config) pair reproduces a run exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::int64_t index(std::int64_t n) { return std::uniform_int_distribution<std::int64_t>(0, n - 1)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  Tensor uniform_tensor(Shape shape, double lo, double hi);
  Tensor normal_tensor(Shape shape, double stddev = 1.0);

  // Independent child stream; derived deterministically from this one.
  Rng fork() { return Rng(next_u64()); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace deskmvs
