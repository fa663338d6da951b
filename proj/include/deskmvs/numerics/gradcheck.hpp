#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "deskmvs/numerics/tape.hpp"

namespace deskmvs {

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates probed per trainable parameter; 0 probes all of them.
  std::int64_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  std::int64_t coords_checked = 0;
};

// Compares the tape gradient of a scalar function against central differences.
// Error per coordinate is |analytic - numeric| / max(1, |analytic|). Frozen
// params must come back with an all-zero gradient (Error otherwise) and are not
// probed. `f` is called once on a recording tape and then twice per probed
// coordinate on inference tapes.
GradCheckResult check_gradient(const std::function<Var(Tape&)>& f, const ParamList& params,
                               const GradCheckOptions& options = {});

}  // namespace deskmvs
