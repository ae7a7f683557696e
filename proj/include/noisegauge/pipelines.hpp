// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noisegauge/bilevel.hpp"
#include "noisegauge/dataset.hpp"
#include "noisegauge/errors.hpp"
#include "noisegauge/grouped.hpp"
#include "noisegauge/models.hpp"
#include "noisegauge/rng.hpp"
#include "noisegauge/schedule.hpp"

namespace noisegauge {
/// Every knob of the three-stage protocol. Rater-stage defaults are the reference
/// hyperparameters; diffusion budgets are scaled to the 2-D toy problems.
/// hyperparameters; diffusion budgets are scaled to the 2-D toy problems.
struct TrainConfig {
  // data
  DatasetKind dataset = DatasetKind::ConditionalMixture;
  int d = 2;
  int num_classes = 4;
  std::size_t n_data = 20000;

  // forward process
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double p_drop = 0.1;

  // networks
  int t_emb_dim = 32;
  int c_emb_dim = 32;
  std::vector<int> denoiser_hidden = {128, 128};
  std::vector<int> rater_hidden = {64, 64};
  bool rater_use_x0 = true;
  bool rater_use_t = true;
  bool rater_use_c = true;

  // diffusion training (pretrain, selection, baselines)
  int train_batch = 128;
  double train_lr = 1e-3;
  long pretrain_steps = 20000;
  long select_steps = 8000;
  int candidate_pool = 4;  // K'

  // rater meta-training
  int group_size = 4;  // K
  int inner_steps = 5;  // S
  long meta_steps = 2000;  // N
  double inner_lr = 5e-2;  // alpha
  double meta_lr = 1e-4;  // beta
  int inner_batch = 32;
  int val_batch = 128;
  double grad_clip = 1.0;
  int meta_refresh = 4;  // R

  // evaluation
  long eval_every = 2000;
  int eval_samples = 2000;
  int ddim_steps = 50;
  double ddim_eta = 0.0;
  double cfg_scale = 1.25;
  int swd_projections = 128;

  // analysis
  int stat_images = 2000;
  int stat_noises = 16;
  int stat_t_points = 11;
  long sweep_rater_steps = 500;
  int smooth_window = 500;
  int stability_window = 1000;

  // seeds
  std::uint64_t data_seed = 0;
  std::uint64_t init_seed = 1;
  std::uint64_t train_seed = 2;
  std::uint64_t eval_seed = 3;

  int workers = 1;

  /// Throws ConfigError on any violated constraint.
  void validate() const;

  DatasetSpec dataset_spec() const;
  NoiseSchedule schedule() const;
  DenoiserArch denoiser_arch() const;
  RaterArch rater_arch() const;
};

/// Training loss logged once per optimizer step.
struct LossCurve {
  std::vector<long> steps;
  std::vector<double> losses;

  void append(long step, double loss);
  std::size_t size() const { return steps.size(); }
};

void write_loss_csv(const std::string& path, const LossCurve& curve);
LossCurve read_loss_csv(const std::string& path);

/// Scalar score of one candidate noise; larger is preferred.
using NoiseScorer =
    std::function<double(std::span<const double> eps, double t_norm, std::span<const double> x0, CondToken cond)>;

NoiseScorer rater_scorer(const Rater& rater, const ParamVector& eta);

enum class NaiveMode { Min, Max };
NoiseScorer norm_scorer(NaiveMode mode);

/// Reduces every group to its top-scoring noise (lowest index on ties; index 0 without a scorer)
/// and sets K = 1. Returns the chosen index per group.
std::vector<std::size_t> select_top1(GroupedBatch& batch, const NoiseScorer* scorer, const NoiseSchedule& sched);

struct Snapshot {
  long step = 0;
  ParamVector theta;
};

/// Non-finite training loss; carries the parameters from before the failing step.
class TrainingDiverged : public NumericalAbort {
 public:
  TrainingDiverged(long step, ParamVector last_good)
      : NumericalAbort("non-finite training loss at step " + std::to_string(step)),
        step(step),
        last_good(std::move(last_good)) {}

  long step;
  ParamVector last_good;
};

struct TrainResult {
  ParamVector theta;
  LossCurve curve;
  std::vector<Snapshot> snapshots;  // every snapshot_every steps, including step 0
};

/// Shared diffusion training loop. Each step draws a grouped batch of train_batch groups
/// with `pool` candidate noises; with a scorer the argmax candidate (lowest index on ties)
/// is trained on, otherwise the first. Adam on the diffusion loss averaged over the batch.
TrainResult train_diffusion(const TrainConfig& cfg, const Denoiser& denoiser, ParamVector theta,
                            const ToyDataset& data, long steps, int pool, const NoiseScorer* scorer, Rng& rng,
                            long snapshot_every = 0);

/// Stage (i): standard training from the seeded initialization.
TrainResult pretrain(const TrainConfig& cfg, const ToyDataset& data, Rng& rng);

/// Vanilla continuation: candidate pool of one, no scorer.
TrainResult train_vanilla(const TrainConfig& cfg, const ParamVector& theta, const ToyDataset& data, Rng& rng);

/// Stage (iii): top-1 selection among cfg.candidate_pool noises by a frozen rater.
TrainResult train_with_selection(const TrainConfig& cfg, const ParamVector& theta, const Rater& rater,
                                 const ParamVector& eta, const ToyDataset& data, Rng& rng);

/// Baseline: pick the candidate of minimum or maximum l2 norm.
TrainResult train_naive(const TrainConfig& cfg, const ParamVector& theta, NaiveMode mode, const ToyDataset& data,
                        Rng& rng);

struct MetaStepLog {
  long step = 0;
  double val_loss_before = 0.0;
  double val_loss_after = 0.0;
  double grad_norm = 0.0;
};

struct RaterTrainResult {
  ParamVector eta;
  std::vector<MetaStepLog> log;
};

/// Stage (ii): N outer steps of unrolled meta-gradient descent on the rater. The working
/// denoiser copy carries over between outer steps and is reset to the frozen base every R steps.
RaterTrainResult train_rater(const TrainConfig& cfg, const ParamVector& base_theta, ParamVector eta,
                             const ToyDataset& data, Rng& rng, std::optional<long> steps = std::nullopt);

/// Centered rolling mean; windows are truncated at the ends of the curve.
std::vector<double> smooth_centered(std::span<const double> values, int window);

/// Smallest logged step t such that the smoothed loss stays <= target at every logged
/// point in [t, t + W] (W counted in logged entries). std::nullopt when no such step exists.
std::optional<long> match_checkpoint(const LossCurve& curve, double target, int smooth_window, int stability_window);

/// DDIM samples; conditional datasets draw a uniform class per sample and apply CFG at cfg.cfg_scale.
/// Each sample uses its own (seed, index) stream, so results do not depend on the worker count.
std::vector<std::vector<double>> generate_samples(const TrainConfig& cfg, const Denoiser& denoiser,
                                                  const ParamVector& theta, std::size_t n, std::uint64_t seed);

/// Sliced Wasserstein distance of generated samples to a held-out reference draw.
double evaluate_swd(const TrainConfig& cfg, const Denoiser& denoiser, const ParamVector& theta);

}  // namespace noisegauge
