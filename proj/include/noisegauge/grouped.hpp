// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "noisegauge/dataset.hpp"
#include "noisegauge/models.hpp"
#include "noisegauge/rng.hpp"
#include "noisegauge/schedule.hpp"

namespace noisegauge {

/// K noise draws sharing one (x0, c~, t) triple.
struct NoiseGroup {
  std::size_t sample = 0;
  std::vector<double> x0;
  CondToken cond;
  int t = 0;
  std::vector<std::vector<double>> noises;
};

struct GroupedBatch {
  int K = 1;
  std::vector<NoiseGroup> groups;

  std::size_t size() const { return groups.size(); }
};

/// Per group, draws in order: sample index from pool, timestep uniform on {0..T-1},
/// a dropout uniform (condition replaced by the null token when < p_drop), then K
/// standard-normal noises. The draw order is fixed so pipelines sharing an rng stream
/// consume it identically.
GroupedBatch sample_grouped_batch(const ToyDataset& data, std::span<const std::size_t> pool, int B, int K,
                                  double p_drop, const NoiseSchedule& sched, Rng& rng);

/// Softmax with max subtraction. Non-finite scores throw NumericalAbort.
std::vector<double> group_weights(std::span<const double> scores);

/// mean_g sum_k w_gk ||eps_gk - eps_theta(x_t^(k), t, c~)||^2 with w_g = softmax(rater scores of group g).
/// When rater is null every weight is 1/K (plain diffusion loss averaged over all instances).
/// grad_theta / grad_eta are accumulated into when non-empty.
template <class T>
T weighted_inner_loss(const Denoiser& denoiser, std::span<const T> theta, const Rater* rater, std::span<const T> eta,
                      const GroupedBatch& batch, const NoiseSchedule& sched, std::span<T> grad_theta,
                      std::span<T> grad_eta);

double weighted_inner_loss(const Denoiser& denoiser, const ParamVector& theta, const Rater& rater,
                           const ParamVector& eta, const GroupedBatch& batch, const NoiseSchedule& sched);

/// Unweighted mean of the per-instance diffusion loss over the batch.
double mean_diffusion_loss(const Denoiser& denoiser, const ParamVector& theta, const GroupedBatch& batch,
                           const NoiseSchedule& sched);

/// Rater weights for every group of a batch.
std::vector<std::vector<double>> batch_weights(const Rater& rater, const ParamVector& eta, const GroupedBatch& batch,
                                               const NoiseSchedule& sched);

}  // namespace noisegauge
