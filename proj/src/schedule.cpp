// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/schedule.hpp"

#include <cmath>
#include <string>

#include "noisegauge/errors.hpp"

namespace noisegauge {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    betas[static_cast<std::size_t>(t)] = beta_start + (beta_end - beta_start) * frac;
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs T >= 1");
  NoiseSchedule s;
  s.alphas.reserve(betas.size());
  s.alpha_bars.reserve(betas.size());
  double prod = 1.0;
  for (std::size_t t = 0; t < betas.size(); ++t) {
    if (!(betas[t] > 0.0 && betas[t] < 1.0))
      throw ConfigError("beta[" + std::to_string(t) + "] outside (0,1)");
    s.alphas.push_back(1.0 - betas[t]);
    prod *= s.alphas.back();
    s.alpha_bars.push_back(prod);
  }
  s.betas = std::move(betas);
  return s;
}

std::vector<double> q_sample(std::span<const double> x0, std::span<const double> eps, double alpha_bar) {
  if (x0.size() != eps.size()) throw ConfigError("q_sample: noise dimension does not match x0");
  const double a = std::sqrt(alpha_bar);
  const double b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T()) throw ConfigError("q_sample: timestep out of range");
  return q_sample(x0, eps, sched.alpha_bars[static_cast<std::size_t>(t)]);
}

}  // namespace noisegauge
