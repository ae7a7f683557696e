// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noisegauge/dataset.hpp"
#include "noisegauge/pipelines.hpp"
#include "noisegauge/rng.hpp"

namespace noisegauge {

struct SpearmanResult {
  double rho = 0.0;
  bool degenerate = false;  // one argument was constant; rho reported as 0
};

/// Pearson correlation of average ranks.
SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys);

/// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

struct RaterStatRow {
  std::string stage;
  std::size_t image_id = 0;
  double t_norm = 0.0;
  double rho = 0.0;
  double score_std = 0.0;
  bool degenerate = false;

  bool operator==(const RaterStatRow&) const = default;
};

struct RaterStatOptions {
  std::string stage = "0";
  int n_images = 2000;
  int n_noise = 16;
  int t_points = 11;  // t in {0, 1/(t_points-1), ..., 1}
  std::uint64_t seed = 0;
  int workers = 1;
};

/// For each sampled image and each t on the grid: score the image's candidate noises
/// (the same candidates at every t), then the Spearman correlation of scores against
/// noise l2 norms and the population standard deviation of the scores.
/// Rows are ordered by (image, t).
std::vector<RaterStatRow> rater_statistics(const NoiseScorer& scorer, const ToyDataset& data,
                                           const RaterStatOptions& opt);

struct StageInput {
  std::string label;
  ParamVector theta;
};

/// One rater per stage, all from the same initialization and training stream, meta-trained
/// for `rater_steps` outer steps atop that stage's denoiser, then scored by rater_statistics.
std::vector<RaterStatRow> stage_sweep(const TrainConfig& cfg, const std::vector<StageInput>& stages,
                                      const ToyDataset& data, long rater_steps);

/// Mean |rho| over non-degenerate rows, optionally restricted to one stage label.
double mean_abs_rho(std::span<const RaterStatRow> rows, const std::string& stage = "");

void write_stats_csv(const std::string& path, std::span<const RaterStatRow> rows);
std::vector<RaterStatRow> read_stats_csv(const std::string& path);

struct MetricRow {
  std::string run;
  long step = 0;
  double swd = 0.0;
};
void write_metric_csv(const std::string& path, std::span<const MetricRow> rows);

using SampleSet = std::vector<std::vector<double>>;

/// n unit vectors in R^d (normalized Gaussian draws).
std::vector<std::vector<double>> random_directions(int n, int d, Rng& rng);

/// 2-Wasserstein distance between two 1-D empirical measures (exact quantile coupling;
/// reduces to the sorted-difference formula for equal sizes).
double wasserstein1d(std::vector<double> a, std::vector<double> b);

/// Mean over directions of the 1-D W2 distance between the projected sets.
double sliced_wasserstein(const SampleSet& a, const SampleSet& b, const std::vector<std::vector<double>>& directions);
double sliced_wasserstein(const SampleSet& a, const SampleSet& b, int n_proj, Rng& rng);

}  // namespace noisegauge
