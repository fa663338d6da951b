#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deskmvs/cli/config.hpp"
#include "deskmvs/numerics/gradcheck.hpp"

namespace deskmvs::cli {

// ---- gradient checks ------------------------------------------------------------

struct GradCase {
  std::string name;
  // Builds fresh inputs and parameters from `seed` and runs check_gradient.
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

// One case per differentiable operation, plus Pre-LN and Post-LN blocks (self
// and cross), the SVA block, ALS, the CVT and the conv3d regularizer.
std::vector<GradCase> gradcheck_cases();

// ---- attention entropy ----------------------------------------------------------

struct EntropySweepConfig {
  std::int64_t head_dim = 64;
  std::vector<std::int64_t> lengths{512, 1024, 2048, 4096, 8192};
  double mean_length = 512.0;
  int seeds = 10;
  std::int64_t queries = 64;
  std::uint64_t seed = 0;
};

struct EntropyRow {
  std::int64_t n = 0;
  double default_mean = 0.0, default_std = 0.0;
  double aas_mean = 0.0, aas_std = 0.0;
};

struct EntropySweep {
  std::vector<EntropyRow> rows;
  // Per seed: |H(n_last) - H(n_first)| / H(n_first) under each rule.
  std::vector<double> default_drift, aas_drift;
};

// Mean attention entropy of i.i.d. standard normal queries against i.i.d.
// standard normal keys, for every length and seed, under default and AAS
// scaling. The draws are shared between the two rules.
EntropySweep run_entropy_sweep(const EntropySweepConfig& cfg);

// ---- LN placement -----------------------------------------------------------------

struct LnToyConfig {
  int blocks = 6;
  std::int64_t d_model = 32;
  std::int64_t heads = 4;
  std::int64_t tokens = 16;
  std::int64_t sequences = 8;
  int steps = 500;
  double lr = 1e-3;
};

// Training loss per step of a stack of blocks with the given LN placement on a
// fixed regression task (the data depend on the seed only, never on `ln`).
std::vector<double> ln_toy_losses(LnPlacement ln, const LnToyConfig& cfg, std::uint64_t seed);

// ---- training and evaluation --------------------------------------------------------

struct SceneSplit {
  std::vector<SceneSample> train;
  std::vector<SceneSample> val;
};

// Renders (or reads, when data.dir is set) the train/val scenes of a config.
SceneSplit load_scenes(const ExperimentConfig& cfg);

struct RunResult {
  EvalMetrics metrics;
  std::vector<double> losses;
  double train_seconds = 0.0;
  std::int64_t trainable_params = 0;
};

RunResult train_and_evaluate(const ExperimentConfig& cfg, const SceneSplit& scenes, std::uint64_t seed,
                             const std::function<void(int, double)>& on_step = {});

nlohmann::json metrics_json(const EvalMetrics& m);

// ---- ablation grid ----------------------------------------------------------------------

struct AblationRow {
  std::string name;
  std::function<void(ModelConfig&)> apply;
};

// The six cumulative rows: conv3d baseline, CVT, +FPE, +AAS, +SVA, +Norm&ALS.
std::vector<AblationRow> ablation_rows();

// ---- resolution extrapolation ---------------------------------------------------------------

struct ExtrapolationConfig {
  // 128 x 256 with 32 hypotheses is a 16 x 4 x 8 token grid (512 tokens);
  // 512 x 512 is 16 x 16 x 16 (4096 tokens).
  std::int64_t train_height = 128, train_width = 256;
  std::int64_t eval_height = 512, eval_width = 512;
  int hypotheses = 32;
  int train_scenes = 60;
  int eval_scenes = 4;
  int steps = 400;
  double lr = 1e-3;
  int cvt_layers = 2;
};

struct ExtrapolationResult {
  std::int64_t train_tokens = 0, eval_tokens = 0;
  EvalMetrics with_fpe_aas;
  EvalMetrics without;
};

// Trains a single-stage CVT model twice on the same scenes, once with FPE and
// AAS (calibrated to the training length) and once with neither, and evaluates
// both at the larger resolution.
ExtrapolationResult run_extrapolation(const ExtrapolationConfig& cfg, std::uint64_t seed);

}  // namespace deskmvs::cli
