// Command-line front end: dataset generation, training, evaluation and the
// diagnostic experiments. Every run writes manifest.json and metrics.json into
// --out; metrics.json holds no wall-clock data so reruns compare byte for byte.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deskmvs/cli/config.hpp"
#include "deskmvs/cli/experiments.hpp"
#include "deskmvs/cli/report.hpp"
#include "deskmvs/kernels/kernels.hpp"
#include "deskmvs/numerics/serialize.hpp"
#include "deskmvs/scenes/dataset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deskmvs;
using namespace deskmvs::cli;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct GlobalOptions {
  std::string config;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
  int threads = 0;
};

struct Context {
  std::string command;
  GlobalOptions opts;
  ConfigMap map;
  ExperimentConfig exp;
  fs::path out;

  void write_manifest() const {
    RunManifest m;
    m.command = command;
    m.seed = opts.seed;
    m.config_hash = map.hash();
    m.deterministic = opts.deterministic;
    m.threads = kernels::num_threads();
    m.config = to_json(exp);
    write_json(out / "manifest.json", manifest_json(m));
  }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

LinePlot loss_plot(const std::string& title, const std::vector<Series>& series) {
  return {title, "step", "training loss", false, series};
}

Series loss_series(const std::string& name, const std::vector<double>& losses) {
  Series s{name, {}, losses};
  s.xs.resize(losses.size());
  std::iota(s.xs.begin(), s.xs.end(), 0.0);
  return s;
}

// ---- subcommands ----------------------------------------------------------------

int cmd_gen(Context& ctx) {
  ctx.map.reject_unused();
  const int count = ctx.exp.data.train + ctx.exp.data.val;
  const Dataset ds = generate_dataset(ctx.out / "data", ctx.exp.data.seed, count,
                                      static_cast<double>(ctx.exp.data.train) / count, ctx.exp.scene);
  ctx.write_manifest();
  write_json(ctx.out / "metrics.json", {{"train", ds.train.size()}, {"val", ds.val.size()}});
  std::cout << "wrote " << ds.train.size() << " train and " << ds.val.size() << " val scenes to "
            << (ctx.out / "data").string() << "\n";
  return kExitOk;
}

int cmd_train(Context& ctx) {
  ctx.map.reject_unused();
  const SceneSplit scenes = load_scenes(ctx.exp);
  MvsModel model(ctx.exp.model, ctx.opts.seed);
  TrainConfig tc = ctx.exp.train;
  tc.seed = ctx.opts.seed;
  const int every = std::max(1, tc.steps / 20);
  const TrainLog log = train_model(model, scenes.train, tc, [&](int step, double loss) {
    if ((step + 1) % every == 0) std::cout << "step " << step + 1 << " loss " << num(loss) << std::endl;
  });
  const EvalMetrics m = evaluate_model(model, scenes.val);
  check_finite(m.mean_abs_error, "validation error");
  save_checkpoint(ctx.out / "model.ckpt", model.params());
  ctx.write_manifest();
  json metrics = metrics_json(m);
  metrics["final_loss"] = log.loss.empty() ? 0.0 : log.loss.back();
  metrics["trainable_params"] = count_parameters(model.trainable_params());
  write_json(ctx.out / "metrics.json", metrics);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < log.loss.size(); ++i) rows.push_back({std::to_string(i), num(log.loss[i])});
  write_csv(ctx.out / "loss.csv", {"step", "loss"}, rows);
  write_text(ctx.out / "loss.svg", render_svg(loss_plot("training loss", {loss_series("loss", log.loss)})));
  std::cout << "e2 " << num(m.ratios[0]) << " e4 " << num(m.ratios[1]) << " e8 " << num(m.ratios[2]) << " ("
            << num(log.seconds) << " s)\n";
  return kExitOk;
}

int cmd_eval(Context& ctx, const std::string& checkpoint) {
  ctx.map.reject_unused();
  const SceneSplit scenes = load_scenes(ctx.exp);
  MvsModel model(ctx.exp.model, ctx.opts.seed);
  load_checkpoint(checkpoint, model.params());
  const EvalMetrics m = evaluate_model(model, scenes.val);
  check_finite(m.mean_abs_error, "validation error");
  ctx.write_manifest();
  write_json(ctx.out / "metrics.json", metrics_json(m));
  std::cout << "e2 " << num(m.ratios[0]) << " e4 " << num(m.ratios[1]) << " e8 " << num(m.ratios[2]) << "\n";
  return kExitOk;
}

int cmd_ablate(Context& ctx) {
  const int seeds = ctx.map.get("ablate.seeds", 1);
  ctx.map.reject_unused();
  if (seeds < 1) throw ConfigError("ablate.seeds must be >= 1");
  const SceneSplit scenes = load_scenes(ctx.exp);
  std::vector<std::vector<std::string>> rows;
  std::vector<Series> curves;
  json all = json::array();
  for (const auto& row : ablation_rows()) {
    ExperimentConfig cfg = ctx.exp;
    row.apply(cfg.model);
    std::array<double, 3> ratios{};
    double mae = 0.0;
    std::int64_t params = 0;
    for (int s = 0; s < seeds; ++s) {
      const RunResult r = train_and_evaluate(cfg, scenes, ctx.opts.seed + static_cast<std::uint64_t>(s));
      for (int k = 0; k < 3; ++k) ratios[static_cast<std::size_t>(k)] += r.metrics.ratios[static_cast<std::size_t>(k)] / seeds;
      mae += r.metrics.mean_abs_error / seeds;
      params = r.trainable_params;
      if (s == 0) curves.push_back(loss_series(row.name, r.losses));
    }
    check_finite(mae, row.name + " error");
    std::cout << row.name << ": e2 " << num(ratios[0]) << " e4 " << num(ratios[1]) << " e8 " << num(ratios[2])
              << "\n";
    rows.push_back({row.name, num(ratios[0]), num(ratios[1]), num(ratios[2]), num(mae), std::to_string(params)});
    all.push_back({{"name", row.name},
                   {"e2", ratios[0]},
                   {"e4", ratios[1]},
                   {"e8", ratios[2]},
                   {"mean_abs_error_mm", mae},
                   {"trainable_params", params}});
  }
  ctx.write_manifest();
  write_csv(ctx.out / "summary.csv", {"config", "e2", "e4", "e8", "mae_mm", "trainable_params"}, rows);
  write_text(ctx.out / "ablation_loss.svg", render_svg(loss_plot("ablation training loss", curves)));
  write_json(ctx.out / "metrics.json", {{"seeds", seeds}, {"rows", all}});
  return kExitOk;
}

int cmd_sweep_entropy(Context& ctx) {
  EntropySweepConfig ec;
  ec.head_dim = ctx.map.get("entropy.head_dim", ec.head_dim);
  ec.lengths = ctx.map.get("entropy.lengths", ec.lengths);
  ec.mean_length = ctx.map.get("entropy.mean_length", ec.mean_length);
  ec.seeds = ctx.map.get("entropy.seeds", ec.seeds);
  ec.queries = ctx.map.get("entropy.queries", ec.queries);
  ctx.map.reject_unused();
  ec.seed = ctx.opts.seed;
  const EntropySweep sw = run_entropy_sweep(ec);

  std::vector<std::vector<std::string>> rows;
  Series def{"default 1/sqrt(d)", {}, {}}, aas{"AAS", {}, {}};
  json jrows = json::array();
  for (const auto& r : sw.rows) {
    check_finite(r.default_mean + r.aas_mean, "entropy");
    rows.push_back({std::to_string(r.n), num(r.default_mean), num(r.default_std), num(r.aas_mean), num(r.aas_std)});
    def.xs.push_back(static_cast<double>(r.n));
    def.ys.push_back(r.default_mean);
    aas.xs.push_back(static_cast<double>(r.n));
    aas.ys.push_back(r.aas_mean);
    jrows.push_back({{"n", r.n},
                     {"default_mean", r.default_mean},
                     {"default_std", r.default_std},
                     {"aas_mean", r.aas_mean},
                     {"aas_std", r.aas_std}});
  }
  int aas_better = 0;
  for (std::size_t s = 0; s < sw.aas_drift.size(); ++s) aas_better += sw.aas_drift[s] < sw.default_drift[s];
  ctx.write_manifest();
  write_csv(ctx.out / "entropy.csv", {"n", "default_mean", "default_std", "aas_mean", "aas_std"}, rows);
  write_text(ctx.out / "entropy.svg",
             render_svg({"attention entropy vs sequence length", "keys n", "mean entropy (nats)", true, {def, aas}}));
  write_json(ctx.out / "metrics.json", {{"rows", jrows},
                                        {"default_drift", sw.default_drift},
                                        {"aas_drift", sw.aas_drift},
                                        {"seeds_aas_drift_smaller", aas_better}});
  for (const auto& r : rows) std::cout << csv_line(r) << "\n";
  std::cout << "AAS drift smaller in " << aas_better << "/" << sw.aas_drift.size() << " seeds\n";
  return kExitOk;
}

int cmd_extrapolate(Context& ctx) {
  ExtrapolationConfig xc;
  xc.train_height = ctx.map.get("extrapolate.train_height", xc.train_height);
  xc.train_width = ctx.map.get("extrapolate.train_width", xc.train_width);
  xc.eval_height = ctx.map.get("extrapolate.eval_height", xc.eval_height);
  xc.eval_width = ctx.map.get("extrapolate.eval_width", xc.eval_width);
  xc.hypotheses = ctx.map.get("extrapolate.hypotheses", xc.hypotheses);
  xc.train_scenes = ctx.map.get("extrapolate.train_scenes", xc.train_scenes);
  xc.eval_scenes = ctx.map.get("extrapolate.eval_scenes", xc.eval_scenes);
  xc.steps = ctx.map.get("extrapolate.steps", xc.steps);
  xc.lr = ctx.map.get("extrapolate.lr", xc.lr);
  xc.cvt_layers = ctx.map.get("extrapolate.cvt_layers", xc.cvt_layers);
  const int seeds = ctx.map.get("extrapolate.seeds", 1);
  ctx.map.reject_unused();
  if (seeds < 1) throw ConfigError("extrapolate.seeds must be >= 1");

  std::vector<std::vector<std::string>> rows;
  json runs = json::array();
  Series with{"FPE+AAS", {}, {}}, without{"no FPE, default scaling", {}, {}};
  int wins = 0;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = ctx.opts.seed + static_cast<std::uint64_t>(s);
    const ExtrapolationResult r = run_extrapolation(xc, seed);
    const double a = r.with_fpe_aas.ratios[1], b = r.without.ratios[1];
    check_finite(a + b, "extrapolation e4");
    wins += a < b;
    rows.push_back({std::to_string(seed), std::to_string(r.train_tokens), std::to_string(r.eval_tokens), num(a),
                    num(b)});
    with.xs.push_back(static_cast<double>(seed));
    with.ys.push_back(a);
    without.xs.push_back(static_cast<double>(seed));
    without.ys.push_back(b);
    runs.push_back({{"seed", seed},
                    {"train_tokens", r.train_tokens},
                    {"eval_tokens", r.eval_tokens},
                    {"fpe_aas", metrics_json(r.with_fpe_aas)},
                    {"baseline", metrics_json(r.without)}});
    std::cout << "seed " << seed << ": e4 FPE+AAS " << num(a) << " vs baseline " << num(b) << "\n";
  }
  ctx.write_manifest();
  write_csv(ctx.out / "extrapolation.csv", {"seed", "train_tokens", "eval_tokens", "e4_fpe_aas", "e4_baseline"},
            rows);
  write_text(ctx.out / "extrapolation.svg",
             render_svg({"e4 at the evaluation resolution", "seed", "e4", false, {with, without}}));
  write_json(ctx.out / "metrics.json", {{"runs", runs}, {"fpe_aas_wins", wins}});
  return kExitOk;
}

int cmd_gradcheck(Context& ctx) {
  const int seeds = ctx.map.get("gradcheck.seeds", 5);
  const double tol = ctx.map.get("gradcheck.tolerance", 1e-6);
  ctx.map.reject_unused();
  if (seeds < 1) throw ConfigError("gradcheck.seeds must be >= 1");
  std::vector<std::vector<std::string>> rows;
  json cases = json::object();
  bool ok = true;
  for (const auto& c : gradcheck_cases()) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
      worst = std::max(worst, c.run(ctx.opts.seed + static_cast<std::uint64_t>(s)).max_rel_error);
    }
    check_finite(worst, c.name + " gradient error");
    const bool pass = worst < tol;
    ok = ok && pass;
    rows.push_back({c.name, num(worst), pass ? "pass" : "FAIL"});
    cases[c.name] = worst;
    std::cout << (pass ? "pass " : "FAIL ") << c.name << " " << num(worst) << "\n";
  }
  ctx.write_manifest();
  write_csv(ctx.out / "gradcheck.csv", {"case", "max_rel_error", "status"}, rows);
  write_json(ctx.out / "metrics.json", {{"seeds", seeds}, {"tolerance", tol}, {"cases", cases}, {"pass", ok}});
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view depth estimation toolkit"};
  app.require_subcommand(1);
  GlobalOptions opts;
  app.add_option("--config", opts.config, "line-oriented JSON config (one object per line)");
  app.add_option("--seed", opts.seed, "model and sampling seed");
  app.add_flag("--deterministic", opts.deterministic, "single thread, fixed reduction order");
  app.add_option("--out", opts.out, "output directory (default runs/<command>)");
  app.add_option("--threads", opts.threads, "OpenMP threads (0 keeps the runtime default)")->check(CLI::NonNegativeNumber);

  std::string checkpoint;
  auto* gen = app.add_subcommand("gen", "render a synthetic dataset to disk");
  auto* train = app.add_subcommand("train", "train the cascade and evaluate on the val split");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
  auto* ablate = app.add_subcommand("ablate", "train the six ablation configurations");
  auto* sweep = app.add_subcommand("sweep-entropy", "attention entropy vs sequence length");
  auto* extrap = app.add_subcommand("extrapolate", "train small, evaluate at a larger resolution");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  for (auto* sub : {gen, train, eval, ablate, sweep, extrap, grad}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  ctx.opts = opts;
  try {
    kernels::set_num_threads(opts.deterministic ? 1 : opts.threads);
    if (!opts.config.empty()) ctx.map = ConfigMap::load(opts.config);
    ctx.exp = experiment_from(ctx.map);
    ctx.out = opts.out.empty() ? fs::path("runs") / ctx.command : fs::path(opts.out);
    fs::create_directories(ctx.out);

    if (ctx.command == "gen") return cmd_gen(ctx);
    if (ctx.command == "train") return cmd_train(ctx);
    if (ctx.command == "eval") return cmd_eval(ctx, checkpoint);
    if (ctx.command == "ablate") return cmd_ablate(ctx);
    if (ctx.command == "sweep-entropy") return cmd_sweep_entropy(ctx);
    if (ctx.command == "extrapolate") return cmd_extrapolate(ctx);
    return cmd_gradcheck(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
