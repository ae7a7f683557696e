// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

namespace noisegauge {

/// Discrete variance schedule of the forward noising process.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  int T() const { return static_cast<int>(betas.size()); }

  /// Betas interpolated linearly from beta_start to beta_end over T steps.
  static NoiseSchedule linear(int T, double beta_start, double beta_end);
  static NoiseSchedule from_betas(std::vector<double> betas);

  /// Timestep fed to the networks: t / T.
  double normalized(int t) const { return static_cast<double>(t) / static_cast<double>(T()); }
};

/// Class condition, or the null token used for classifier-free dropout.
class CondToken {
 public:
  CondToken() = default;
  static CondToken null() { return CondToken(); }
  static CondToken label(int c) { return CondToken(c); }

  bool is_null() const { return !cls_.has_value(); }
  int value() const { return *cls_; }
  /// Row of a (C+1)-row embedding table; the null token is the last row.
  int row(int num_classes) const { return cls_ ? *cls_ : num_classes; }

  bool operator==(const CondToken&) const = default;

 private:
  explicit CondToken(int c) : cls_(c) {}
  std::optional<int> cls_;
};

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps.
std::vector<double> q_sample(std::span<const double> x0, std::span<const double> eps, double alpha_bar);
std::vector<double> q_sample(std::span<const double> x0, int t, std::span<const double> eps,
                             const NoiseSchedule& sched);

}  // namespace noisegauge
