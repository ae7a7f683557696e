// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/pipelines.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "noisegauge/analysis.hpp"
#include "noisegauge/diffusion.hpp"
#include "noisegauge/errors.hpp"
#include "noisegauge/grouped.hpp"
#include "noisegauge/optim.hpp"
#include "noisegauge/parallel.hpp"

namespace noisegauge {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  require(d >= 2, "d >= 2");
  require(num_classes >= 0, "num_classes >= 0");
  require(dataset != DatasetKind::ConditionalMixture || num_classes >= 1, "conditional-mixture needs num_classes >= 1");
  require(n_data >= 10, "n_data >= 10");
  require(T >= 1, "T >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "0 < beta_start <= beta_end < 1");
  require(p_drop >= 0.0 && p_drop <= 1.0, "p_drop in [0,1]");
  require(t_emb_dim > 0 && t_emb_dim % 2 == 0, "t_emb_dim positive and even");
  require(c_emb_dim > 0, "c_emb_dim > 0");
  require(!denoiser_hidden.empty() && !rater_hidden.empty(), "at least one hidden layer per network");
  require(train_batch >= 1 && inner_batch >= 1 && val_batch >= 1, "batch sizes >= 1");
  require(train_lr > 0.0 && inner_lr > 0.0 && meta_lr > 0.0, "learning rates > 0");
  require(pretrain_steps >= 0 && select_steps >= 0 && meta_steps >= 0 && sweep_rater_steps >= 0, "step budgets >= 0");
  require(candidate_pool >= 1, "candidate_pool (K') >= 1");
  require(group_size >= 1, "group_size (K) >= 1");
  require(inner_steps >= 1, "inner_steps (S) >= 1");
  require(grad_clip >= 0.0, "grad_clip >= 0");
  require(meta_refresh >= 1, "meta_refresh >= 1");
  require(eval_every >= 0 && eval_samples >= 1, "eval cadence");
  require(ddim_steps >= 1 && ddim_steps <= T, "1 <= ddim_steps <= T");
  require(ddim_eta >= 0.0 && ddim_eta <= 1.0, "ddim_eta in [0,1]");
  require(swd_projections >= 1, "swd_projections >= 1");
  require(stat_images >= 1 && stat_noises >= 2 && stat_t_points >= 2, "analysis sizes");
  require(smooth_window >= 1 && stability_window >= 0, "loss-matching windows");
  require(workers >= 1, "workers >= 1");
}

DatasetSpec TrainConfig::dataset_spec() const {
  DatasetSpec s;
  s.kind = dataset;
  s.d = d;
  s.num_classes = num_classes;
  s.n = n_data;
  s.seed = data_seed;
  return s;
}

NoiseSchedule TrainConfig::schedule() const { return NoiseSchedule::linear(T, beta_start, beta_end); }

DenoiserArch TrainConfig::denoiser_arch() const {
  DenoiserArch a;
  a.d = d;
  a.num_classes = dataset_classes(dataset_spec());
  a.t_emb_dim = t_emb_dim;
  a.c_emb_dim = c_emb_dim;
  a.hidden = denoiser_hidden;
  return a;
}

RaterArch TrainConfig::rater_arch() const {
  RaterArch a;
  a.d = d;
  a.num_classes = dataset_classes(dataset_spec());
  a.t_emb_dim = t_emb_dim;
  a.c_emb_dim = c_emb_dim;
  a.hidden = rater_hidden;
  a.use_x0 = rater_use_x0;
  a.use_t = rater_use_t;
  a.use_c = rater_use_c;
  return a;
}

void LossCurve::append(long step, double loss) {
  if (!steps.empty() && step <= steps.back()) throw ConfigError("loss curve steps must be strictly increasing");
  steps.push_back(step);
  losses.push_back(loss);
}

void write_loss_csv(const std::string& path, const LossCurve& curve) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact("cannot write " + path);
  f << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g\n", curve.steps[i], curve.losses[i]);
    f << buf;
  }
}

LossCurve read_loss_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("cannot read " + path);
  std::string line;
  std::getline(f, line);
  if (line != "step,loss") throw MissingArtifact(path + ": expected header 'step,loss'");
  LossCurve c;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw MissingArtifact(path + ": malformed row");
    c.append(std::stol(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return c;
}

NoiseScorer rater_scorer(const Rater& rater, const ParamVector& eta) {
  rater.check(eta);
  return [&rater, &eta](std::span<const double> eps, double t_norm, std::span<const double> x0, CondToken cond) {
    Activations<double> act;
    return rater.score<double>(eta.values, eps, t_norm, x0, cond, act);
  };
}

NoiseScorer norm_scorer(NaiveMode mode) {
  const double sign = mode == NaiveMode::Max ? 1.0 : -1.0;
  return [sign](std::span<const double> eps, double, std::span<const double>, CondToken) {
    double sq = 0.0;
    for (double e : eps) sq += e * e;
    return sign * std::sqrt(sq);
  };
}

std::vector<std::size_t> select_top1(GroupedBatch& batch, const NoiseScorer* scorer, const NoiseSchedule& sched) {
  std::vector<std::size_t> chosen;
  chosen.reserve(batch.groups.size());
  for (auto& g : batch.groups) {
    std::size_t best = 0;
    if (scorer && g.noises.size() > 1) {
      const double t_norm = sched.normalized(g.t);
      double best_score = (*scorer)(g.noises[0], t_norm, g.x0, g.cond);
      for (std::size_t k = 1; k < g.noises.size(); ++k) {
        const double s = (*scorer)(g.noises[k], t_norm, g.x0, g.cond);
        if (s > best_score) {
          best_score = s;
          best = k;
        }
      }
    }
    if (best != 0) std::swap(g.noises[0], g.noises[best]);
    g.noises.resize(1);
    chosen.push_back(best);
  }
  batch.K = 1;
  return chosen;
}

TrainResult train_diffusion(const TrainConfig& cfg, const Denoiser& denoiser, ParamVector theta,
                            const ToyDataset& data, long steps, int pool, const NoiseScorer* scorer, Rng& rng,
                            long snapshot_every) {
  cfg.validate();
  denoiser.check(theta);
  if (pool < 1) throw ConfigError("candidate pool must be >= 1");
  const auto sched = cfg.schedule();
  Adam opt(cfg.train_lr);
  TrainResult res;
  std::vector<double> grad(theta.size());

  for (long step = 0; step < steps; ++step) {
    if (snapshot_every > 0 && step % snapshot_every == 0) res.snapshots.push_back({step, theta});
    auto batch = sample_grouped_batch(data, data.train_idx, cfg.train_batch, pool, cfg.p_drop, sched, rng);
    select_top1(batch, scorer, sched);

    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss =
        weighted_inner_loss<double>(denoiser, theta.values, nullptr, {}, batch, sched, grad, {});
    if (!std::isfinite(loss)) throw TrainingDiverged(step, theta);
    res.curve.append(step, loss);
    opt.step(theta.values, grad);
  }
  if (snapshot_every > 0 && steps % snapshot_every == 0) res.snapshots.push_back({steps, theta});
  res.theta = std::move(theta);
  return res;
}

TrainResult pretrain(const TrainConfig& cfg, const ToyDataset& data, Rng& rng) {
  const Denoiser den(cfg.denoiser_arch());
  return train_diffusion(cfg, den, den.init_params(cfg.init_seed), data, cfg.pretrain_steps, 1, nullptr, rng,
                         cfg.eval_every);
}

TrainResult train_vanilla(const TrainConfig& cfg, const ParamVector& theta, const ToyDataset& data, Rng& rng) {
  const Denoiser den(cfg.denoiser_arch());
  return train_diffusion(cfg, den, theta, data, cfg.select_steps, 1, nullptr, rng, cfg.eval_every);
}

TrainResult train_with_selection(const TrainConfig& cfg, const ParamVector& theta, const Rater& rater,
                                 const ParamVector& eta, const ToyDataset& data, Rng& rng) {
  const Denoiser den(cfg.denoiser_arch());
  const auto scorer = rater_scorer(rater, eta);
  return train_diffusion(cfg, den, theta, data, cfg.select_steps, cfg.candidate_pool, &scorer, rng, cfg.eval_every);
}

TrainResult train_naive(const TrainConfig& cfg, const ParamVector& theta, NaiveMode mode, const ToyDataset& data,
                        Rng& rng) {
  const Denoiser den(cfg.denoiser_arch());
  const auto scorer = norm_scorer(mode);
  return train_diffusion(cfg, den, theta, data, cfg.select_steps, cfg.candidate_pool, &scorer, rng, cfg.eval_every);
}

RaterTrainResult train_rater(const TrainConfig& cfg, const ParamVector& base_theta, ParamVector eta,
                             const ToyDataset& data, Rng& rng, std::optional<long> steps) {
  cfg.validate();
  if (data.val_idx.empty()) throw ConfigError("rater training needs a non-empty validation split");
  const Denoiser den(cfg.denoiser_arch());
  const Rater rater(cfg.rater_arch());
  den.check(base_theta);
  rater.check(eta);
  const auto sched = cfg.schedule();
  Adam opt(cfg.meta_lr);

  RaterTrainResult res;
  std::vector<double> working = base_theta.values;
  const long n_steps = steps.value_or(cfg.meta_steps);
  for (long n = 0; n < n_steps; ++n) {
    if (n % cfg.meta_refresh == 0) working = base_theta.values;
    std::vector<GroupedBatch> batches;
    batches.reserve(static_cast<std::size_t>(cfg.inner_steps));
    for (int s = 0; s < cfg.inner_steps; ++s)
      batches.push_back(
          sample_grouped_batch(data, data.train_idx, cfg.inner_batch, cfg.group_size, cfg.p_drop, sched, rng));
    auto val = sample_grouped_batch(data, data.val_idx, cfg.val_batch, 1, cfg.p_drop, sched, rng);
    const DiffusionBilevelProblem problem(den, rater, sched, std::move(batches), std::move(val));

    MetaGradReport rep;
    try {
      rep = meta_gradient_unrolled(static_cast<const InnerProblem&>(problem), working, eta.values, cfg.inner_steps,
                                   cfg.inner_lr);
    } catch (const NumericalAbort& e) {
      throw NumericalAbort("rater training aborted at outer step " + std::to_string(n) + ": " + e.what());
    }
    const double norm = clip_grad_norm(rep.grad_eta, cfg.grad_clip);
    if (!std::isfinite(norm))
      throw NumericalAbort("non-finite meta-gradient at outer step " + std::to_string(n));
    opt.step(eta.values, rep.grad_eta);
    working = std::move(rep.final_theta);
    res.log.push_back({n, rep.val_loss_before, rep.val_loss_after, norm});
  }
  res.eta = std::move(eta);
  return res;
}

std::vector<double> smooth_centered(std::span<const double> values, int window) {
  if (window < 1) throw ConfigError("smoothing window must be >= 1");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(values.size());
  const std::ptrdiff_t lo_half = (window - 1) / 2;
  const std::ptrdiff_t hi_half = window / 2;
  std::vector<double> prefix(values.size() + 1, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) prefix[i + 1] = prefix[i] + values[i];
  std::vector<double> out(values.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, i - lo_half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n - 1, i + hi_half);
    out[static_cast<std::size_t>(i)] = window == 1 ? values[static_cast<std::size_t>(i)]
                                                   : (prefix[static_cast<std::size_t>(hi + 1)] -
                                                      prefix[static_cast<std::size_t>(lo)]) /
                                                         static_cast<double>(hi - lo + 1);
  }
  return out;
}

std::optional<long> match_checkpoint(const LossCurve& curve, double target, int smooth_window, int stability_window) {
  if (curve.size() == 0) throw ConfigError("match_checkpoint needs a non-empty loss curve");
  if (stability_window < 0) throw ConfigError("stability window must be >= 0");
  const auto smoothed = smooth_centered(curve.losses, smooth_window);
  const std::size_t n = smoothed.size();
  const std::size_t w = static_cast<std::size_t>(stability_window);
  // run = number of consecutive entries <= target starting at i
  std::size_t run = 0;
  std::optional<std::size_t> best;
  for (std::size_t i = n; i-- > 0;) {
    run = smoothed[i] <= target ? run + 1 : 0;
    if (run >= w + 1) best = i;
  }
  if (!best) return std::nullopt;
  return curve.steps[*best];
}

std::vector<std::vector<double>> generate_samples(const TrainConfig& cfg, const Denoiser& denoiser,
                                                  const ParamVector& theta, std::size_t n, std::uint64_t seed) {
  const auto sched = cfg.schedule();
  const auto predictor = make_predictor(denoiser, theta);
  const int classes = denoiser.arch().num_classes;
  std::vector<std::vector<double>> out(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    Rng rng = make_rng(seed, i);
    Guidance g;
    if (classes > 0) {
      g.cond = CondToken::label(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(classes))));
      g.scale = cfg.cfg_scale;
    }
    out[i] = ddim_sample(predictor, sched, denoiser.arch().d, cfg.ddim_steps, cfg.ddim_eta, g, rng);
  });
  return out;
}

double evaluate_swd(const TrainConfig& cfg, const Denoiser& denoiser, const ParamVector& theta) {
  const auto samples = generate_samples(cfg, denoiser, theta, static_cast<std::size_t>(cfg.eval_samples), cfg.eval_seed);
  const auto ref = draw_reference(cfg.dataset_spec(), static_cast<std::size_t>(cfg.eval_samples), cfg.eval_seed);
  SampleSet reference(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) reference[i].assign(ref.row(i).begin(), ref.row(i).end());
  Rng rng = make_rng(cfg.eval_seed, 0x5D);
  return sliced_wasserstein(samples, reference, cfg.swd_projections, rng);
}

}  // namespace noisegauge
