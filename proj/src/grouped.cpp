// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/grouped.hpp"

#include <algorithm>
#include <cmath>

#include "noisegauge/dual.hpp"
#include "noisegauge/errors.hpp"

namespace noisegauge {

GroupedBatch sample_grouped_batch(const ToyDataset& data, std::span<const std::size_t> pool, int B, int K,
                                  double p_drop, const NoiseSchedule& sched, Rng& rng) {
  if (pool.empty() || data.size() == 0) throw ConfigError("cannot sample a batch from an empty dataset");
  if (K < 1 || B < 1) throw ConfigError("grouped batch needs B >= 1 and K >= 1");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw ConfigError("p_drop must lie in [0,1]");
  const std::size_t d = static_cast<std::size_t>(data.spec.d);
  GroupedBatch batch;
  batch.K = K;
  batch.groups.resize(static_cast<std::size_t>(B));
  for (auto& g : batch.groups) {
    g.sample = pool[uniform_index(rng, pool.size())];
    auto row = data.row(g.sample);
    g.x0.assign(row.begin(), row.end());
    g.t = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(sched.T())));
    const double u = uniform01(rng);
    g.cond = u < p_drop ? CondToken::null() : data.cond(g.sample);
    g.noises.assign(static_cast<std::size_t>(K), std::vector<double>(d));
    for (auto& n : g.noises) fill_standard_normal(rng, n);
  }
  return batch;
}

namespace {

template <class T>
void softmax_into(std::span<const T> scores, std::span<T> w) {
  double m = -INFINITY;
  for (const T& s : scores) {
    if (!std::isfinite(value_of(s))) throw NumericalAbort("non-finite rater score");
    m = std::max(m, value_of(s));
  }
  T z(0.0);
  for (std::size_t k = 0; k < scores.size(); ++k) {
    w[k] = exp(scores[k] - T(m));
    z += w[k];
  }
  for (auto& v : w) v = v / z;
}

}  // namespace

std::vector<double> group_weights(std::span<const double> scores) {
  if (scores.empty()) throw ConfigError("group_weights needs at least one score");
  std::vector<double> w(scores.size());
  softmax_into<double>(scores, w);
  return w;
}

template <class T>
T weighted_inner_loss(const Denoiser& denoiser, std::span<const T> theta, const Rater* rater, std::span<const T> eta,
                      const GroupedBatch& batch, const NoiseSchedule& sched, std::span<T> grad_theta,
                      std::span<T> grad_eta) {
  if (batch.groups.empty()) throw ConfigError("empty grouped batch");
  const std::size_t K = static_cast<std::size_t>(batch.K);
  const std::size_t d = static_cast<std::size_t>(denoiser.arch().d);
  const double inv_b = 1.0 / static_cast<double>(batch.groups.size());

  Activations<T> act_d;
  std::vector<Activations<T>> act_r(rater ? K : 0);
  std::vector<T> eps_hat(d), up(d), scores(K), w(K), ell(K);
  T total(0.0);

  for (const auto& g : batch.groups) {
    if (g.noises.size() != K) throw ConfigError("group size does not match batch K");
    const double t_norm = sched.normalized(g.t);
    if (rater) {
      for (std::size_t k = 0; k < K; ++k) scores[k] = rater->score<T>(eta, g.noises[k], t_norm, g.x0, g.cond, act_r[k]);
      softmax_into<T>(scores, w);
    } else {
      std::fill(w.begin(), w.end(), T(1.0 / static_cast<double>(K)));
    }

    T group_loss(0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const auto x_t = q_sample(g.x0, g.t, g.noises[k], sched);
      denoiser.predict<T>(theta, x_t, t_norm, g.cond, eps_hat, act_d);
      T l(0.0);
      for (std::size_t i = 0; i < d; ++i) {
        const T r = eps_hat[i] - T(g.noises[k][i]);
        l += r * r;
      }
      ell[k] = l;
      group_loss += w[k] * l;
      if (!grad_theta.empty()) {
        const T scale = T(2.0 * inv_b) * w[k];
        for (std::size_t i = 0; i < d; ++i) up[i] = scale * (eps_hat[i] - T(g.noises[k][i]));
        denoiser.net().backward<T>(theta, act_d, up, grad_theta);
      }
    }
    total += group_loss;

    if (rater && !grad_eta.empty()) {
      // d(sum_k w_k l_k)/d s_k = w_k (l_k - sum_j w_j l_j)
      for (std::size_t k = 0; k < K; ++k) {
        const T ds[1] = {T(inv_b) * w[k] * (ell[k] - group_loss)};
        rater->net().backward<T>(eta, act_r[k], std::span<const T>(ds, 1), grad_eta);
      }
    }
  }
  return total / T(static_cast<double>(batch.groups.size()));
}

template double weighted_inner_loss<double>(const Denoiser&, std::span<const double>, const Rater*,
                                            std::span<const double>, const GroupedBatch&, const NoiseSchedule&,
                                            std::span<double>, std::span<double>);
template Dual weighted_inner_loss<Dual>(const Denoiser&, std::span<const Dual>, const Rater*, std::span<const Dual>,
                                        const GroupedBatch&, const NoiseSchedule&, std::span<Dual>,
                                        std::span<Dual>);

double weighted_inner_loss(const Denoiser& denoiser, const ParamVector& theta, const Rater& rater,
                           const ParamVector& eta, const GroupedBatch& batch, const NoiseSchedule& sched) {
  denoiser.check(theta);
  rater.check(eta);
  return weighted_inner_loss<double>(denoiser, theta.values, &rater, eta.values, batch, sched, {}, {});
}

double mean_diffusion_loss(const Denoiser& denoiser, const ParamVector& theta, const GroupedBatch& batch,
                           const NoiseSchedule& sched) {
  denoiser.check(theta);
  return weighted_inner_loss<double>(denoiser, theta.values, nullptr, {}, batch, sched, {}, {});
}

std::vector<std::vector<double>> batch_weights(const Rater& rater, const ParamVector& eta, const GroupedBatch& batch,
                                               const NoiseSchedule& sched) {
  rater.check(eta);
  std::vector<std::vector<double>> out;
  out.reserve(batch.groups.size());
  Activations<double> act;
  std::vector<double> scores(static_cast<std::size_t>(batch.K));
  for (const auto& g : batch.groups) {
    for (std::size_t k = 0; k < scores.size(); ++k)
      scores[k] = rater.score<double>(eta.values, g.noises[k], sched.normalized(g.t), g.x0, g.cond, act);
    out.push_back(group_weights(scores));
  }
  return out;
}

}  // namespace noisegauge
