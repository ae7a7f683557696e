// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "noisegauge/errors.hpp"
#include "noisegauge/parallel.hpp"

namespace noisegauge {

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
    // positions i..j-1 (0-based) share rank mean((i+1)..j)
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("spearman: length mismatch");
  if (xs.size() < 2) throw ConfigError("spearman: need at least two points");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw NumericalAbort("spearman: non-finite input");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mean, b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

std::vector<RaterStatRow> rater_statistics(const NoiseScorer& scorer, const ToyDataset& data,
                                           const RaterStatOptions& opt) {
  if (opt.n_images < 1 || opt.n_noise < 2 || opt.t_points < 2)
    throw ConfigError("rater statistics need n_images >= 1, n_noise >= 2, t_points >= 2");
  if (data.size() == 0) throw ConfigError("rater statistics need a non-empty dataset");
  const std::size_t d = static_cast<std::size_t>(data.spec.d);
  const std::size_t n_img = static_cast<std::size_t>(opt.n_images);
  const std::size_t n_noise = static_cast<std::size_t>(opt.n_noise);
  const std::size_t n_t = static_cast<std::size_t>(opt.t_points);

  // all draws happen up front so the result does not depend on the worker count
  Rng rng = make_rng(opt.seed, 0x57A7);
  std::vector<std::size_t> images(n_img);
  std::vector<double> noises(n_img * n_noise * d);
  for (std::size_t i = 0; i < n_img; ++i) {
    images[i] = uniform_index(rng, data.size());
    fill_standard_normal(rng, std::span<double>(noises).subspan(i * n_noise * d, n_noise * d));
  }

  std::vector<RaterStatRow> rows(n_img * n_t);
  parallel_for(n_img, opt.workers, [&](std::size_t i) {
    const auto x0 = data.row(images[i]);
    const CondToken cond = data.cond(images[i]);
    std::vector<double> norms(n_noise), scores(n_noise);
    for (std::size_t k = 0; k < n_noise; ++k) {
      const auto eps = std::span<const double>(noises).subspan((i * n_noise + k) * d, d);
      double sq = 0.0;
      for (double e : eps) sq += e * e;
      norms[k] = std::sqrt(sq);
    }
    for (std::size_t j = 0; j < n_t; ++j) {
      const double t_norm = static_cast<double>(j) / static_cast<double>(n_t - 1);
      for (std::size_t k = 0; k < n_noise; ++k)
        scores[k] = scorer(std::span<const double>(noises).subspan((i * n_noise + k) * d, d), t_norm, x0, cond);
      const auto sp = spearman(scores, norms);
      // shifted by the first score so a constant cell gives exactly zero
      double m1 = 0.0, m2 = 0.0;
      for (double s : scores) {
        m1 += s - scores[0];
        m2 += (s - scores[0]) * (s - scores[0]);
      }
      m1 /= static_cast<double>(n_noise);
      const double var = std::max(0.0, m2 / static_cast<double>(n_noise) - m1 * m1);
      rows[i * n_t + j] = {opt.stage, i, t_norm, sp.rho, std::sqrt(var), sp.degenerate};
    }
  });
  return rows;
}

std::vector<RaterStatRow> stage_sweep(const TrainConfig& cfg, const std::vector<StageInput>& stages,
                                      const ToyDataset& data, long rater_steps) {
  const Rater rater(cfg.rater_arch());
  const ParamVector eta0 = rater.init_params(cfg.init_seed);
  std::vector<RaterStatRow> all;
  for (const auto& st : stages) {
    Rng rng = make_rng(cfg.train_seed, 0x5EEB);
    const auto trained = train_rater(cfg, st.theta, eta0, data, rng, rater_steps);
    const auto scorer = rater_scorer(rater, trained.eta);
    RaterStatOptions opt;
    opt.stage = st.label;
    opt.n_images = cfg.stat_images;
    opt.n_noise = cfg.stat_noises;
    opt.t_points = cfg.stat_t_points;
    opt.seed = cfg.eval_seed;
    opt.workers = cfg.workers;
    auto rows = rater_statistics(scorer, data, opt);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  return all;
}

double mean_abs_rho(std::span<const RaterStatRow> rows, const std::string& stage) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.degenerate || (!stage.empty() && r.stage != stage)) continue;
    sum += std::abs(r.rho);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

void write_stats_csv(const std::string& path, std::span<const RaterStatRow> rows) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact("cannot write " + path);
  f << "stage,image_id,t,rho,score_std,degenerate\n";
  char buf[160];
  for (const auto& r : rows) {
    if (r.stage.find_first_of(",\n") != std::string::npos) throw ConfigError("stage label must not contain ',' or newline");
    std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%.17g,%d\n", r.image_id, r.t_norm, r.rho, r.score_std,
                  r.degenerate ? 1 : 0);
    f << r.stage << buf;
  }
}

std::vector<RaterStatRow> read_stats_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("cannot read " + path);
  std::string line;
  std::getline(f, line);
  if (line != "stage,image_id,t,rho,score_std,degenerate") throw MissingArtifact(path + ": unexpected header");
  std::vector<RaterStatRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 6) throw MissingArtifact(path + ": malformed row");
    RaterStatRow r;
    r.stage = cols[0];
    r.image_id = std::stoul(cols[1]);
    r.t_norm = std::stod(cols[2]);
    r.rho = std::stod(cols[3]);
    r.score_std = std::stod(cols[4]);
    r.degenerate = cols[5] == "1";
    rows.push_back(r);
  }
  return rows;
}

void write_metric_csv(const std::string& path, std::span<const MetricRow> rows) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact("cannot write " + path);
  f << "run,step,swd\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%ld,%.17g\n", r.step, r.swd);
    f << r.run << buf;
  }
}

std::vector<std::vector<double>> random_directions(int n, int d, Rng& rng) {
  if (n < 1 || d < 1) throw ConfigError("random_directions needs n >= 1 and d >= 1");
  std::vector<std::vector<double>> dirs(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& v : dirs) {
    double norm = 0.0;
    while (norm < 1e-12) {
      fill_standard_normal(rng, v);
      norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    }
    for (double& x : v) x /= norm;
  }
  return dirs;
}

double wasserstein1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("wasserstein1d needs non-empty inputs");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / na);
  }
  // walk the merged quantile breakpoints k/na and l/nb
  std::size_t i = 0, j = 0;
  double u = 0.0, s = 0.0;
  while (i < a.size() && j < b.size()) {
    const double ua = static_cast<double>(i + 1) / na;
    const double ub = static_cast<double>(j + 1) / nb;
    const double next = std::min(ua, ub);
    s += (next - u) * (a[i] - b[j]) * (a[i] - b[j]);
    u = next;
    if (ua <= ub) ++i;
    if (ub <= ua) ++j;
  }
  return std::sqrt(s);
}

double sliced_wasserstein(const SampleSet& a, const SampleSet& b, const std::vector<std::vector<double>>& directions) {
  if (a.empty() || b.empty()) throw ConfigError("sliced_wasserstein needs non-empty sample sets");
  if (directions.empty()) throw ConfigError("sliced_wasserstein needs at least one direction");
  const std::size_t d = a.front().size();
  auto check = [d](const SampleSet& s) {
    for (const auto& x : s)
      if (x.size() != d) throw ConfigError("sliced_wasserstein: inconsistent sample dimension");
  };
  check(a);
  check(b);
  double total = 0.0;
  std::vector<double> pa(a.size()), pb(b.size());
  for (const auto& dir : directions) {
    if (dir.size() != d) throw ConfigError("sliced_wasserstein: direction dimension mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] = std::inner_product(dir.begin(), dir.end(), a[i].begin(), 0.0);
    for (std::size_t i = 0; i < b.size(); ++i) pb[i] = std::inner_product(dir.begin(), dir.end(), b[i].begin(), 0.0);
    total += wasserstein1d(pa, pb);
  }
  return total / static_cast<double>(directions.size());
}

double sliced_wasserstein(const SampleSet& a, const SampleSet& b, int n_proj, Rng& rng) {
  if (a.empty()) throw ConfigError("sliced_wasserstein needs non-empty sample sets");
  return sliced_wasserstein(a, b, random_directions(n_proj, static_cast<int>(a.front().size()), rng));
}

}  // namespace noisegauge
