// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "noisegauge/analysis.hpp"
#include "noisegauge/config.hpp"
#include "noisegauge/container.hpp"
#include "noisegauge/dataset.hpp"
#include "noisegauge/errors.hpp"

#ifndef NOISEGAUGE_VERSION
#define NOISEGAUGE_VERSION "0.0.0"
#endif
#ifndef NOISEGAUGE_GIT
#define NOISEGAUGE_GIT "unknown"
#endif

namespace fs = std::filesystem;

namespace noisegauge {
namespace {

using json = nlohmann::json;

// rng streams hung off train_seed; selection and baselines share one so the reduction identities hold
constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kRaterStream = 2;
constexpr std::uint64_t kContinueStream = 3;

class Manifest {
 public:
  explicit Manifest(const CommandContext& ctx) : ctx_(ctx) {
    doc_["tool"] = "noisegauge";
    doc_["version"] = tool_version();
    doc_["command"] = ctx.command;
    doc_["config"] = config_to_json(ctx.cfg);
    doc_["config_hash"] = config_hash(ctx.cfg);
    doc_["seeds"] = {{"data_seed", ctx.cfg.data_seed},
                     {"init_seed", ctx.cfg.init_seed},
                     {"train_seed", ctx.cfg.train_seed},
                     {"eval_seed", ctx.cfg.eval_seed},
                     {"seed_offset", ctx.options.seed_offset}};
    doc_["inputs"] = json::object();
    doc_["artifacts"] = json::object();
    doc_["results"] = json::object();
  }

  void input(const std::string& name, const std::string& path) {
    doc_["inputs"][name] = {{"path", path}, {"hash", file_hash(path)}};
  }

  // path relative to the output directory
  std::string artifact_path(const std::string& rel) const { return (fs::path(ctx_.out_dir) / rel).string(); }

  void artifact(const std::string& name, const std::string& rel) {
    doc_["artifacts"][name] = {{"path", rel}, {"hash", file_hash(artifact_path(rel))}};
  }

  json& results() { return doc_["results"]; }

  json finish(const std::string& status) {
    doc_["status"] = status;
    std::string prov = "noisegauge " + tool_version() + " " + ctx_.command + " config=" + doc_["config_hash"].get<std::string>();
    for (auto it = doc_["inputs"].begin(); it != doc_["inputs"].end(); ++it)
      prov += " " + it.key() + "=" + it.value()["hash"].get<std::string>();
    doc_["provenance"] = prov;
    std::ofstream f(artifact_path("manifest.json"));
    if (!f) throw MissingArtifact("cannot write manifest in " + ctx_.out_dir);
    f << doc_.dump(2) << '\n';
    return doc_;
  }

 private:
  const CommandContext& ctx_;
  json doc_;
};

DenoiserCheckpoint load_compatible_denoiser(const TrainConfig& cfg, const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifact("denoiser checkpoint not found: " + path);
  auto ckpt = load_denoiser(path);
  if (!(ckpt.arch == cfg.denoiser_arch()))
    throw ConfigError("denoiser checkpoint " + path + " does not match the configured architecture");
  return ckpt;
}

RaterCheckpoint load_compatible_rater(const TrainConfig& cfg, const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifact("rater checkpoint not found: " + path);
  auto ckpt = load_rater(path);
  if (!(ckpt.arch == cfg.rater_arch()))
    throw ConfigError("rater checkpoint " + path + " does not match the configured architecture");
  return ckpt;
}

std::string step_name(long step) { return "checkpoints/step_" + std::to_string(step) + ".ckpt"; }

// Saves snapshots and the final checkpoint, evaluates SWD at each, writes loss.csv and metric.csv.
void emit_training_outputs(const CommandContext& ctx, Manifest& m, const std::string& run, TrainResult& res,
                           long base_step, std::uint64_t seed) {
  const Denoiser den(ctx.cfg.denoiser_arch());
  const long final_step = base_step + static_cast<long>(res.curve.size());
  for (auto& s : res.curve.steps) s += base_step;
  fs::create_directories(fs::path(ctx.out_dir) / "checkpoints");

  std::vector<Snapshot> points = res.snapshots;
  if (points.empty() || points.back().step != final_step - base_step) points.push_back({final_step - base_step, res.theta});
  std::vector<MetricRow> metrics;
  json ckpts = json::array();
  for (const auto& p : points) {
    const long step = base_step + p.step;
    const std::string rel = step_name(step);
    save_checkpoint(m.artifact_path(rel), DenoiserCheckpoint{den.arch(), p.theta, step, seed});
    m.artifact("checkpoint_step_" + std::to_string(step), rel);
    metrics.push_back({run, step, evaluate_swd(ctx.cfg, den, p.theta)});
  }
  save_checkpoint(m.artifact_path("denoiser.ckpt"), DenoiserCheckpoint{den.arch(), res.theta, final_step, seed});
  m.artifact("denoiser", "denoiser.ckpt");
  write_loss_csv(m.artifact_path("loss.csv"), res.curve);
  m.artifact("loss", "loss.csv");
  write_metric_csv(m.artifact_path("metric.csv"), metrics);
  m.artifact("metric", "metric.csv");
  m.results()["final_step"] = final_step;
  m.results()["final_swd"] = metrics.back().swd;
  if (res.curve.size() > 0) m.results()["final_loss"] = res.curve.losses.back();
}

void save_last_good(const CommandContext& ctx, Manifest& m, const TrainingDiverged& e, long base_step,
                    std::uint64_t seed) {
  const Denoiser den(ctx.cfg.denoiser_arch());
  save_checkpoint(m.artifact_path("denoiser_last_good.ckpt"),
                  DenoiserCheckpoint{den.arch(), e.last_good, base_step + e.step, seed});
  m.artifact("denoiser_last_good", "denoiser_last_good.ckpt");
  m.results()["error"] = e.what();
  m.finish("aborted");
}

}  // namespace

std::string tool_version() { return std::string(NOISEGAUGE_VERSION) + "+" + NOISEGAUGE_GIT; }

TrainConfig resolve_config(const RunOptions& opt) {
  TrainConfig cfg = opt.config_path.empty() ? TrainConfig{} : load_config(opt.config_path);
  cfg = apply_overrides(cfg, opt.overrides);
  if (opt.workers) cfg.workers = *opt.workers;
  cfg.data_seed += opt.seed_offset;
  cfg.init_seed += opt.seed_offset;
  cfg.train_seed += opt.seed_offset;
  cfg.eval_seed += opt.seed_offset;
  cfg.validate();
  return cfg;
}

std::string resolve_out_dir(const std::string& flag) {
  const char* env = std::getenv("NOISEGAUGE_OUT");
  if (env && *env) return env;
  return flag;
}

CommandContext make_context(const std::string& command, const RunOptions& opt) {
  CommandContext ctx{command, opt, resolve_config(opt), resolve_out_dir(opt.out_dir)};
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw MissingArtifact("cannot create output directory " + ctx.out_dir + ": " + ec.message());
  return ctx;
}

json cmd_gen_dataset(const CommandContext& ctx) {
  Manifest m(ctx);
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  save_dataset(m.artifact_path("dataset.bin"), data);
  m.artifact("dataset", "dataset.bin");
  m.results()["n_train"] = data.train_idx.size();
  m.results()["n_val"] = data.val_idx.size();
  return m.finish("ok");
}

json cmd_pretrain(const CommandContext& ctx) {
  Manifest m(ctx);
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  Rng rng = make_rng(ctx.cfg.train_seed, kPretrainStream);
  TrainResult res;
  try {
    res = pretrain(ctx.cfg, data, rng);
  } catch (const TrainingDiverged& e) {
    save_last_good(ctx, m, e, 0, ctx.cfg.train_seed);
    throw;
  }
  emit_training_outputs(ctx, m, "pretrain", res, 0, ctx.cfg.train_seed);
  return m.finish("ok");
}

json cmd_train_rater(const CommandContext& ctx, const std::string& denoiser_path) {
  Manifest m(ctx);
  const auto base = load_compatible_denoiser(ctx.cfg, denoiser_path);
  m.input("denoiser", denoiser_path);
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  const Rater rater(ctx.cfg.rater_arch());
  Rng rng = make_rng(ctx.cfg.train_seed, kRaterStream);
  const auto res = train_rater(ctx.cfg, base.theta, rater.init_params(ctx.cfg.init_seed), data, rng);

  save_checkpoint(m.artifact_path("rater.ckpt"),
                  RaterCheckpoint{rater.arch(), res.eta, static_cast<long>(res.log.size()), ctx.cfg.train_seed});
  m.artifact("rater", "rater.ckpt");
  {
    std::ofstream f(m.artifact_path("meta.csv"));
    f << "step,val_loss_before,val_loss_after,grad_norm\n";
    char buf[128];
    for (const auto& l : res.log) {
      std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g\n", l.step, l.val_loss_before, l.val_loss_after,
                    l.grad_norm);
      f << buf;
    }
  }
  m.artifact("meta_log", "meta.csv");
  m.results()["meta_steps"] = res.log.size();
  return m.finish("ok");
}

json cmd_train_select(const CommandContext& ctx, const std::string& denoiser_path, const std::string& rater_path) {
  Manifest m(ctx);
  const auto base = load_compatible_denoiser(ctx.cfg, denoiser_path);
  const auto rck = load_compatible_rater(ctx.cfg, rater_path);
  m.input("denoiser", denoiser_path);
  m.input("rater", rater_path);
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  const Rater rater(rck.arch);
  Rng rng = make_rng(ctx.cfg.train_seed, kContinueStream);
  TrainResult res;
  try {
    res = train_with_selection(ctx.cfg, base.theta, rater, rck.eta, data, rng);
  } catch (const TrainingDiverged& e) {
    save_last_good(ctx, m, e, base.step, ctx.cfg.train_seed);
    throw;
  }
  emit_training_outputs(ctx, m, "select", res, base.step, ctx.cfg.train_seed);
  return m.finish("ok");
}

json cmd_baseline(const CommandContext& ctx, const std::string& mode, const std::string& denoiser_path) {
  if (mode != "vanilla" && mode != "naive-min" && mode != "naive-max")
    throw ConfigError("baseline mode must be vanilla, naive-min or naive-max");
  Manifest m(ctx);
  const auto base = load_compatible_denoiser(ctx.cfg, denoiser_path);
  m.input("denoiser", denoiser_path);
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  Rng rng = make_rng(ctx.cfg.train_seed, kContinueStream);
  TrainResult res;
  try {
    if (mode == "vanilla")
      res = train_vanilla(ctx.cfg, base.theta, data, rng);
    else
      res = train_naive(ctx.cfg, base.theta, mode == "naive-min" ? NaiveMode::Min : NaiveMode::Max, data, rng);
  } catch (const TrainingDiverged& e) {
    save_last_good(ctx, m, e, base.step, ctx.cfg.train_seed);
    throw;
  }
  emit_training_outputs(ctx, m, mode, res, base.step, ctx.cfg.train_seed);
  return m.finish("ok");
}

json cmd_eval(const CommandContext& ctx, const std::string& denoiser_path, const std::string& run_label) {
  Manifest m(ctx);
  const auto ck = load_compatible_denoiser(ctx.cfg, denoiser_path);
  m.input("denoiser", denoiser_path);
  const Denoiser den(ck.arch);
  const double swd = evaluate_swd(ctx.cfg, den, ck.theta);
  const std::vector<MetricRow> rows{{run_label, ck.step, swd}};
  write_metric_csv(m.artifact_path("metric.csv"), rows);
  m.artifact("metric", "metric.csv");
  m.results()["swd"] = swd;
  return m.finish("ok");
}

json cmd_analyze_rater_stats(const CommandContext& ctx, const std::string& rater_path, const std::string& stage) {
  Manifest m(ctx);
  const auto rck = load_compatible_rater(ctx.cfg, rater_path);
  m.input("rater", rater_path);
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  const Rater rater(rck.arch);
  RaterStatOptions opt;
  opt.stage = stage;
  opt.n_images = ctx.cfg.stat_images;
  opt.n_noise = ctx.cfg.stat_noises;
  opt.t_points = ctx.cfg.stat_t_points;
  opt.seed = ctx.cfg.eval_seed;
  opt.workers = ctx.cfg.workers;
  const auto rows = rater_statistics(rater_scorer(rater, rck.eta), data, opt);
  write_stats_csv(m.artifact_path("stats.csv"), rows);
  m.artifact("stats", "stats.csv");
  m.results()["rows"] = rows.size();
  m.results()["mean_abs_rho"] = mean_abs_rho(rows);
  return m.finish("ok");
}

json cmd_analyze_stage_sweep(const CommandContext& ctx, const std::vector<std::pair<std::string, std::string>>& stages) {
  if (stages.empty()) throw ConfigError("stage-sweep needs at least one --stage label=checkpoint");
  Manifest m(ctx);
  std::vector<StageInput> inputs;
  for (const auto& [label, path] : stages) {
    inputs.push_back({label, load_compatible_denoiser(ctx.cfg, path).theta});
    m.input("stage_" + label, path);
  }
  const auto data = generate_dataset(ctx.cfg.dataset_spec());
  const auto rows = stage_sweep(ctx.cfg, inputs, data, ctx.cfg.sweep_rater_steps);
  write_stats_csv(m.artifact_path("stats.csv"), rows);
  m.artifact("stats", "stats.csv");
  json per_stage = json::object();
  for (const auto& s : inputs) per_stage[s.label] = mean_abs_rho(rows, s.label);
  m.results()["mean_abs_rho"] = per_stage;
  return m.finish("ok");
}

json cmd_analyze_match(const CommandContext& ctx, const std::string& curve_path, std::optional<double> target,
                       const std::string& reference_path) {
  Manifest m(ctx);
  if (!fs::exists(curve_path)) throw MissingArtifact("loss curve not found: " + curve_path);
  const auto curve = read_loss_csv(curve_path);
  m.input("curve", curve_path);
  if (!target) {
    if (reference_path.empty()) throw ConfigError("match-checkpoint needs --target or --reference");
    if (!fs::exists(reference_path)) throw MissingArtifact("reference curve not found: " + reference_path);
    const auto ref = read_loss_csv(reference_path);
    if (ref.size() == 0) throw ConfigError("reference curve is empty");
    m.input("reference", reference_path);
    target = smooth_centered(ref.losses, ctx.cfg.smooth_window).back();
  }
  const auto step = match_checkpoint(curve, *target, ctx.cfg.smooth_window, ctx.cfg.stability_window);
  m.results()["target"] = *target;
  m.results()["matched_step"] = step ? json(*step) : json(nullptr);
  std::cout << (step ? std::to_string(*step) : std::string("NOT_FOUND")) << '\n';
  return m.finish("ok");
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace noisegauge
