// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace noisegauge {

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<double> params, std::span<const double> grad);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

/// Rescales grad in place so its l2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(std::span<double> grad, double max_norm);

}  // namespace noisegauge
