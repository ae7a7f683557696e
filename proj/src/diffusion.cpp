// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/diffusion.hpp"

#include <cmath>

#include "noisegauge/errors.hpp"

namespace noisegauge {

NoisePredictor make_predictor(const Denoiser& net, const ParamVector& theta) {
  net.check(theta);
  return [&net, &theta](std::span<const double> x_t, double t_norm, CondToken cond) {
    std::vector<double> out(x_t.size());
    Activations<double> act;
    net.predict<double>(theta.values, x_t, t_norm, cond, out, act);
    return out;
  };
}

double diffusion_loss(const NoisePredictor& predict, std::span<const double> x0, int t, std::span<const double> eps,
                      CondToken cond, const NoiseSchedule& sched) {
  const auto x_t = q_sample(x0, t, eps, sched);
  const auto eps_hat = predict(x_t, sched.normalized(t), cond);
  if (eps_hat.size() != eps.size()) throw ConfigError("diffusion_loss: prediction dimension mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double r = eps[i] - eps_hat[i];
    loss += r * r;
  }
  return loss;
}

double diffusion_loss(const Denoiser& net, const ParamVector& theta, std::span<const double> x0, int t,
                      std::span<const double> eps, CondToken cond, const NoiseSchedule& sched) {
  return diffusion_loss(make_predictor(net, theta), x0, t, eps, cond, sched);
}

std::vector<double> cfg_predict(const NoisePredictor& predict, std::span<const double> x_t, double t_norm, int cls,
                                double scale) {
  const auto cond = predict(x_t, t_norm, CondToken::label(cls));
  const auto uncond = predict(x_t, t_norm, CondToken::null());
  std::vector<double> out(cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + scale * (cond[i] - uncond[i]);
  return out;
}

std::vector<int> ddim_timesteps(int T, int n_steps) {
  if (n_steps < 1 || n_steps > T) throw ConfigError("ddim needs 1 <= n_steps <= T");
  const int stride = T / n_steps;
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(n_steps));
  // Anchored at the last timestep so the trajectory always starts from the noisiest level.
  for (int i = 0; i < n_steps; ++i) ts.push_back(T - 1 - (n_steps - 1 - i) * stride);
  return ts;
}

std::vector<double> ddim_sample(const NoisePredictor& predict, const NoiseSchedule& sched, int d, int n_steps,
                                double eta, const Guidance& guidance, Rng& rng) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("ddim eta must lie in [0,1]");
  const auto ts = ddim_timesteps(sched.T(), n_steps);
  std::vector<double> x(static_cast<std::size_t>(d));
  fill_standard_normal(rng, x);
  std::vector<double> z(static_cast<std::size_t>(d));

  for (std::size_t i = ts.size(); i-- > 0;) {
    const int t = ts[i];
    const double ab = sched.alpha_bars[static_cast<std::size_t>(t)];
    const double ab_prev = i > 0 ? sched.alpha_bars[static_cast<std::size_t>(ts[i - 1])] : 1.0;
    const double t_norm = sched.normalized(t);

    std::vector<double> eps_hat;
    if (guidance.scale && !guidance.cond.is_null())
      eps_hat = cfg_predict(predict, x, t_norm, guidance.cond.value(), *guidance.scale);
    else
      eps_hat = predict(x, t_norm, guidance.cond);

    const double sigma =
        eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    if (sigma > 0.0) fill_standard_normal(rng, z);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double x0_hat = (x[k] - std::sqrt(1.0 - ab) * eps_hat[k]) / std::sqrt(ab);
      x[k] = std::sqrt(ab_prev) * x0_hat + dir * eps_hat[k] + (sigma > 0.0 ? sigma * z[k] : 0.0);
    }
  }
  return x;
}

}  // namespace noisegauge
