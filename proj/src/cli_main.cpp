// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <CLI11.hpp>

#include "noisegauge/cli.hpp"
#include "noisegauge/errors.hpp"

namespace noisegauge {

int run_cli(int argc, char** argv) {
  CLI::App app{"noisegauge: meta-learned noise valuation for toy diffusion models"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);

  RunOptions opt;
  int workers = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON config file (defaults when omitted)");
    sub->add_option("--set", opt.overrides, "override one config key, key=value (repeatable)");
    sub->add_option("--out", opt.out_dir, "output directory (NOISEGAUGE_OUT takes precedence)");
    sub->add_option("--workers", workers, "worker threads for evaluation fan-out")->check(CLI::PositiveNumber);
    sub->add_option("--seed-offset", opt.seed_offset, "added to every seed key");
  };

  std::string denoiser, rater, mode, run_label = "eval", stage = "0", curve, reference;
  std::optional<double> target;
  std::vector<std::string> stage_specs;

  auto* gen = app.add_subcommand("gen-dataset", "write the configured toy dataset");
  add_common(gen);

  auto* pre = app.add_subcommand("pretrain", "stage (i): standard diffusion training from init");
  add_common(pre);

  auto* tr = app.add_subcommand("train-rater", "stage (ii): meta-train a noise rater on a frozen denoiser");
  add_common(tr);
  tr->add_option("--denoiser", denoiser, "frozen denoiser checkpoint")->required();

  auto* sel = app.add_subcommand("train-select", "stage (iii): continue training on rater-selected noise");
  add_common(sel);
  sel->add_option("--denoiser", denoiser, "denoiser checkpoint to resume")->required();
  sel->add_option("--rater", rater, "frozen rater checkpoint")->required();

  auto* base = app.add_subcommand("baseline", "continue training without a rater");
  add_common(base);
  base->add_option("mode", mode, "vanilla | naive-min | naive-max")
      ->required()
      ->check(CLI::IsMember({"vanilla", "naive-min", "naive-max"}));
  base->add_option("--denoiser", denoiser, "denoiser checkpoint to resume")->required();

  auto* ev = app.add_subcommand("eval", "sliced-Wasserstein distance of DDIM samples to held-out data");
  add_common(ev);
  ev->add_option("--denoiser", denoiser, "denoiser checkpoint")->required();
  ev->add_option("--run", run_label, "run label for metric.csv");

  auto* an = app.add_subcommand("analyze", "rater statistics and loss-curve matching");
  an->require_subcommand(1);
  auto* rs = an->add_subcommand("rater-stats", "score-norm Spearman and score spread per (image, t)");
  add_common(rs);
  rs->add_option("--rater", rater, "rater checkpoint")->required();
  rs->add_option("--stage", stage, "stage label written to stats.csv");
  auto* sw = an->add_subcommand("stage-sweep", "train one rater per denoiser stage, then rater-stats");
  add_common(sw);
  sw->add_option("--stage", stage_specs, "label=checkpoint (repeatable, in output order)")->required();
  auto* mc = an->add_subcommand("match-checkpoint", "first step whose smoothed loss stays at or below a target");
  add_common(mc);
  mc->add_option("--curve", curve, "loss.csv to search")->required();
  mc->add_option("--target", target, "target loss");
  mc->add_option("--reference", reference, "loss.csv whose final smoothed loss is the target");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (workers > 0) opt.workers = workers;

  try {
    if (*gen) {
      cmd_gen_dataset(make_context("gen-dataset", opt));
    } else if (*pre) {
      cmd_pretrain(make_context("pretrain", opt));
    } else if (*tr) {
      cmd_train_rater(make_context("train-rater", opt), denoiser);
    } else if (*sel) {
      cmd_train_select(make_context("train-select", opt), denoiser, rater);
    } else if (*base) {
      cmd_baseline(make_context("baseline " + mode, opt), mode, denoiser);
    } else if (*ev) {
      cmd_eval(make_context("eval", opt), denoiser, run_label);
    } else if (*rs) {
      cmd_analyze_rater_stats(make_context("analyze rater-stats", opt), rater, stage);
    } else if (*sw) {
      std::vector<std::pair<std::string, std::string>> stages;
      for (const auto& s : stage_specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--stage expects label=checkpoint: " + s);
        stages.emplace_back(s.substr(0, eq), s.substr(eq + 1));
      }
      cmd_analyze_stage_sweep(make_context("analyze stage-sweep", opt), stages);
    } else if (*mc) {
      cmd_analyze_match(make_context("analyze match-checkpoint", opt), curve, target, reference);
    }
  } catch (...) {
    return exit_code_for_current_exception();
  }
  return kExitOk;
}

}  // namespace noisegauge
