// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "noisegauge/models.hpp"
#include "noisegauge/rng.hpp"
#include "noisegauge/schedule.hpp"

namespace noisegauge {

/// eps_hat = predictor(x_t, t_norm, cond)
using NoisePredictor = std::function<std::vector<double>(std::span<const double>, double, CondToken)>;

NoisePredictor make_predictor(const Denoiser& net, const ParamVector& theta);

/// ||eps - eps_hat(q_sample(x0, t, eps), t, cond)||^2, unreduced over components.
double diffusion_loss(const NoisePredictor& predict, std::span<const double> x0, int t, std::span<const double> eps,
                      CondToken cond, const NoiseSchedule& sched);
double diffusion_loss(const Denoiser& net, const ParamVector& theta, std::span<const double> x0, int t,
                      std::span<const double> eps, CondToken cond, const NoiseSchedule& sched);

/// eps_uncond + scale * (eps_cond - eps_uncond).
std::vector<double> cfg_predict(const NoisePredictor& predict, std::span<const double> x_t, double t_norm, int cls,
                                double scale);

/// Conditioning for sampling. With a class label and a scale, classifier-free guidance is applied;
/// otherwise the predictor is queried with `cond` directly.
struct Guidance {
  CondToken cond;
  std::optional<double> scale;
};

/// Evenly strided DDIM timestep subsequence, ascending.
std::vector<int> ddim_timesteps(int T, int n_steps);

/// Generates one sample of dimension d starting from x_T ~ N(0, I) drawn from rng.
/// eta = 0 gives the deterministic sampler; eta = 1 matches DDPM-level stochasticity.
std::vector<double> ddim_sample(const NoisePredictor& predict, const NoiseSchedule& sched, int d, int n_steps,
                                double eta, const Guidance& guidance, Rng& rng);

}  // namespace noisegauge
