#pragma once

#include <array>
#include <functional>
#include <vector>

#include "deskmvs/numerics/optim.hpp"
#include "deskmvs/pipeline/model.hpp"

namespace deskmvs {

struct TrainConfig {
  int steps = 2000;
  double lr = 1.5e-3;
  // Linear warmup, then cosine decay to lr * final_lr_ratio.
  int warmup_steps = 100;
  double final_lr_ratio = 0.1;
  // Scenes whose gradients are averaged into one update.
  int batch = 1;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> loss;  // one entry per step
  double seconds = 0.0;
};

// `batch` scenes per step, visiting scenes in a reshuffled order every epoch.
// `on_step(step, loss)` runs after each update.
TrainLog train_model(MvsModel& model, const std::vector<SceneSample>& scenes, const TrainConfig& cfg,
                     const std::function<void(int, double)>& on_step = {});

struct EvalMetrics {
  // Error ratios of the final stage against GT on its own grid.
  std::array<double, 3> ratios{};
  double mean_abs_error = 0.0;
  std::int64_t pixels = 0;
  // Per stage: e2, e4, e8.
  std::vector<std::array<double, 3>> stage_ratios;
};

EvalMetrics evaluate_model(MvsModel& model, const std::vector<SceneSample>& scenes);

}  // namespace deskmvs
