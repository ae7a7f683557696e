// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used as oracles by the unit tests and the
// acceptance runner. Nothing here calls into the library's numerics.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "noisegauge/params.hpp"

namespace ngtest {

inline std::vector<double> randn(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

// Max over coordinates of |a-b| / max(|a|, |b|, floor).
inline double max_rel_err(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

// Floor for the relative-error metric: components far below the gradient's own scale are
// compared on that scale, since central differences carry an absolute round-off of
// roughly eps * |f| / h regardless of how small the component is.
inline double rel_floor(std::span<const double> reference) { return 1e-3 * std::max(max_abs(reference), 1e-8); }

// sin/cos pairs, angle 1000 * t * 10000^(-i/half)
inline std::vector<double> sinusoid(double t, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double angle = 1000.0 * t * std::pow(10000.0, -static_cast<double>(i) / half);
    e[2 * i] = std::sin(angle);
    e[2 * i + 1] = std::cos(angle);
  }
  return e;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Layer-by-layer re-evaluation straight from named slots: class_emb, l0.w/l0.b, ..., out.w/out.b.
// `row` < 0 means no class embedding input; t_dim == 0 means no time embedding input.
inline std::vector<double> mlp_oracle(const noisegauge::ParamVector& p, std::vector<double> data, double t,
                                      int t_dim, int row) {
  std::vector<double> h = std::move(data);
  if (t_dim > 0) {
    const auto e = sinusoid(t, t_dim);
    h.insert(h.end(), e.begin(), e.end());
  }
  if (row >= 0) {
    const auto& slot = p.layout.slot("class_emb");
    const std::size_t width = slot.shape[1];
    const auto table = p.slice("class_emb");
    for (std::size_t i = 0; i < width; ++i) h.push_back(table[static_cast<std::size_t>(row) * width + i]);
  }
  for (int l = 0;; ++l) {
    const std::string name = "l" + std::to_string(l);
    bool last = false;
    const noisegauge::ParamSlot* w = nullptr;
    for (const auto& s : p.layout.slots())
      if (s.name == name + ".w") w = &s;
    std::string use = name;
    if (!w) {
      use = "out";
      last = true;
    }
    const auto& ws = p.layout.slot(use + ".w");
    const auto W = p.slice(use + ".w");
    const auto b = p.slice(use + ".b");
    const std::size_t rows = ws.shape[0], cols = ws.shape[1];
    std::vector<double> next(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = b[r];
      for (std::size_t c = 0; c < cols; ++c) s += W[r * cols + c] * h[c];
      next[r] = last ? s : silu(s);
    }
    h = std::move(next);
    if (last) return h;
  }
}

}  // namespace ngtest
