// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "noisegauge/pipelines.hpp"

namespace noisegauge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingArtifact = 3;
inline constexpr int kExitNumerical = 4;

std::string tool_version();

struct RunOptions {
  std::string config_path;  // empty: built-in defaults
  std::vector<std::string> overrides;
  std::string out_dir = "runs/default";
  std::optional<int> workers;
  std::uint64_t seed_offset = 0;
};

/// Defaults, then the config file, then --set overrides in order, then --workers;
/// the seed offset is added to all four seeds last.
TrainConfig resolve_config(const RunOptions& opt);

/// NOISEGAUGE_OUT wins over the flag when set and non-empty.
std::string resolve_out_dir(const std::string& flag);

struct CommandContext {
  std::string command;
  RunOptions options;
  TrainConfig cfg;
  std::string out_dir;
};

/// Resolves config and output directory and creates the directory.
CommandContext make_context(const std::string& command, const RunOptions& opt);

// Each command writes its artifacts and manifest.json under ctx.out_dir and returns the manifest.
nlohmann::json cmd_gen_dataset(const CommandContext& ctx);
nlohmann::json cmd_pretrain(const CommandContext& ctx);
nlohmann::json cmd_train_rater(const CommandContext& ctx, const std::string& denoiser_path);
nlohmann::json cmd_train_select(const CommandContext& ctx, const std::string& denoiser_path,
                                const std::string& rater_path);
/// mode: vanilla | naive-min | naive-max
nlohmann::json cmd_baseline(const CommandContext& ctx, const std::string& mode, const std::string& denoiser_path);
nlohmann::json cmd_eval(const CommandContext& ctx, const std::string& denoiser_path, const std::string& run_label);
nlohmann::json cmd_analyze_rater_stats(const CommandContext& ctx, const std::string& rater_path,
                                       const std::string& stage);
/// stages: (label, denoiser checkpoint path) in output order.
nlohmann::json cmd_analyze_stage_sweep(const CommandContext& ctx,
                                       const std::vector<std::pair<std::string, std::string>>& stages);
/// Target is either given directly or taken as the final smoothed loss of a reference curve.
nlohmann::json cmd_analyze_match(const CommandContext& ctx, const std::string& curve_path,
                                 std::optional<double> target, const std::string& reference_path);

/// Maps the library exception hierarchy to exit codes; prints the message to stderr.
int exit_code_for_current_exception();

/// Full command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace noisegauge
