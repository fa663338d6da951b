#include "deskmvs/pipeline/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "deskmvs/numerics/errors.hpp"
#include "deskmvs/numerics/random.hpp"

namespace deskmvs {

TrainLog train_model(MvsModel& model, const std::vector<SceneSample>& scenes, const TrainConfig& cfg,
                     const std::function<void(int, double)>& on_step) {
  if (scenes.empty()) throw ArgumentError("train: no scenes");
  if (cfg.steps < 0 || cfg.warmup_steps < 0) throw ArgumentError("train: negative step count");
  if (cfg.batch < 1) throw ArgumentError("train: batch must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  Adam opt(model.trainable_params(), AdamOptions{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  TrainLog log;
  auto next_scene = [&]() -> const SceneSample& {
    if (cursor == order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(i)))]);
      }
      cursor = 0;
    }
    return scenes[order[cursor++]];
  };
  const int decay_steps = std::max(1, cfg.steps - cfg.warmup_steps - 1);
  for (int step = 0; step < cfg.steps; ++step) {
    if (step < cfg.warmup_steps) {
      opt.options().lr = cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
    } else {
      const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / decay_steps);
      opt.options().lr = cfg.lr * (cfg.final_lr_ratio + (1.0 - cfg.final_lr_ratio) * 0.5 *
                                                            (1.0 + std::cos(std::numbers::pi * progress)));
    }
    opt.zero_grad();
    double total = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const SceneSample& scene = next_scene();
      Tape tape;
      const auto preds = model.forward(tape, scene);
      const Var loss = scale(cascade_loss(preds, scene), 1.0 / cfg.batch);
      tape.backward(loss);
      total += loss.value()[0];
    }
    if (!std::isfinite(total)) throw NumericError("train: non-finite loss at step " + std::to_string(step));
    opt.step();
    log.loss.push_back(total);
    if (on_step) on_step(step, total);
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

EvalMetrics evaluate_model(MvsModel& model, const std::vector<SceneSample>& scenes) {
  if (scenes.empty()) throw ArgumentError("evaluate: no scenes");
  std::vector<std::array<double, 4>> stage_counts(model.config().stages.size());  // over2, over4, over8, n
  double abs_sum = 0.0;
  for (const auto& scene : scenes) {
    Tape tape(false);
    const auto preds = model.forward(tape, scene);
    for (std::size_t s = 0; s < preds.size(); ++s) {
      const auto [gt, mask] = stage_ground_truth(scene, preds[s]);
      for (std::int64_t p = 0; p < gt.numel(); ++p) {
        if (mask[p] == 0.0) continue;
        const double err = std::abs(preds[s].depth[p] - gt[p]);
        stage_counts[s][0] += err > 2.0;
        stage_counts[s][1] += err > 4.0;
        stage_counts[s][2] += err > 8.0;
        stage_counts[s][3] += 1.0;
        if (s + 1 == preds.size()) abs_sum += err;
      }
    }
  }
  EvalMetrics m;
  for (const auto& c : stage_counts) {
    if (c[3] == 0.0) throw ArgumentError("evaluate: no valid GT pixels");
    m.stage_ratios.push_back({c[0] / c[3], c[1] / c[3], c[2] / c[3]});
  }
  m.ratios = m.stage_ratios.back();
  m.pixels = static_cast<std::int64_t>(stage_counts.back()[3]);
  m.mean_abs_error = abs_sum / stage_counts.back()[3];
  return m;
}

}  // namespace deskmvs
