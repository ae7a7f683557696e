// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "noisegauge/grouped.hpp"
#include "noisegauge/models.hpp"
#include "noisegauge/rng.hpp"

namespace noisegauge {

/// A bilevel problem seen from the unroller: an inner objective L_inner(theta; eta) with one
/// minibatch per inner step, and a validation objective L_val(theta).
class InnerProblem {
 public:
  virtual ~InnerProblem() = default;

  virtual std::size_t theta_dim() const = 0;
  virtual std::size_t eta_dim() const = 0;
  /// Number of inner steps the problem has data for.
  virtual int max_steps() const = 0;

  /// L_inner at inner step `step`; accumulates into grad_theta when non-empty.
  virtual double inner_loss(int step, std::span<const double> theta, std::span<const double> eta,
                            std::span<double> grad_theta) const = 0;

  /// Hessian of L_inner(theta, eta) applied to the direction (v, 0): writes H_tt v and H_et v.
  virtual void inner_hvp(int step, std::span<const double> theta, std::span<const double> eta,
                         std::span<const double> v, std::span<double> h_theta, std::span<double> h_eta) const = 0;

  /// L_val; accumulates into grad_theta when non-empty.
  virtual double val_loss(std::span<const double> theta, std::span<double> grad_theta) const = 0;
};

/// theta^(s+1) = theta^(s) - alpha * grad L_inner(theta^(s); eta) for s = 0..S-1.
struct InnerTrajectory {
  std::vector<std::vector<double>> theta_steps;  // S + 1 snapshots
  std::vector<double> inner_losses;              // S values
  double alpha = 0.0;

  const std::vector<double>& final_theta() const { return theta_steps.back(); }
};

struct MetaGradReport {
  std::vector<double> grad_eta;
  double val_loss_before = 0.0;
  double val_loss_after = 0.0;
  std::vector<double> inner_losses;
  std::vector<std::vector<std::vector<double>>> per_step_weights;  // [step][group][k], neural problems only
  std::vector<double> final_theta;                                // theta^(S)
};

nlohmann::json to_json(const MetaGradReport& r);

InnerTrajectory inner_loop(const InnerProblem& problem, std::span<const double> theta0, std::span<const double> eta,
                           int S, double alpha);

/// Exact d L_val(theta^(S)) / d eta by reverse accumulation through every SGD step:
///   theta_bar_S = grad L_val(theta^(S))
///   eta_bar    -= alpha * H_et(theta^(s)) theta_bar_{s+1}
///   theta_bar_s = theta_bar_{s+1} - alpha * H_tt(theta^(s)) theta_bar_{s+1}
MetaGradReport meta_gradient_unrolled(const InnerProblem& problem, std::span<const double> theta0,
                                      std::span<const double> eta, int S, double alpha);

/// J(eta) = L_val(theta^(S)(eta)) with the problem's fixed batches replayed.
double unrolled_objective(const InnerProblem& problem, std::span<const double> theta0, std::span<const double> eta,
                          int S, double alpha);

/// Central differences (J(eta + h e_i) - J(eta - h e_i)) / 2h over every coordinate.
std::vector<double> meta_gradient_fd(const InnerProblem& problem, std::span<const double> theta0,
                                     std::span<const double> eta, int S, double alpha, double h = 1e-5);

/// Rater-weighted diffusion problem over fixed inner batches and a validation batch.
class DiffusionBilevelProblem final : public InnerProblem {
 public:
  DiffusionBilevelProblem(const Denoiser& denoiser, const Rater& rater, const NoiseSchedule& sched,
                          std::vector<GroupedBatch> batches, GroupedBatch val_batch, double val_scale = 1.0);

  std::size_t theta_dim() const override { return denoiser_.layout().total(); }
  std::size_t eta_dim() const override { return rater_.layout().total(); }
  int max_steps() const override { return static_cast<int>(batches_.size()); }

  double inner_loss(int step, std::span<const double> theta, std::span<const double> eta,
                    std::span<double> grad_theta) const override;
  void inner_hvp(int step, std::span<const double> theta, std::span<const double> eta, std::span<const double> v,
                 std::span<double> h_theta, std::span<double> h_eta) const override;
  double val_loss(std::span<const double> theta, std::span<double> grad_theta) const override;

  /// Full gradient of L_inner with respect to both theta and eta.
  double inner_grads(int step, std::span<const double> theta, std::span<const double> eta,
                     std::span<double> grad_theta, std::span<double> grad_eta) const;

  const GroupedBatch& batch(int step) const { return batches_.at(static_cast<std::size_t>(step)); }
  const GroupedBatch& val_batch() const { return val_batch_; }
  const Denoiser& denoiser() const { return denoiser_; }
  const Rater& rater() const { return rater_; }
  const NoiseSchedule& schedule() const { return sched_; }

 private:
  const Denoiser& denoiser_;
  const Rater& rater_;
  const NoiseSchedule& sched_;
  std::vector<GroupedBatch> batches_;
  GroupedBatch val_batch_;
  double val_scale_;
};

/// inner_loop over the problem's first S batches (S = number of batches).
InnerTrajectory inner_loop(const DiffusionBilevelProblem& problem, const ParamVector& theta0, const ParamVector& eta,
                           double alpha);

/// Unrolled meta-gradient plus the rater weights used at every inner step.
MetaGradReport meta_gradient_unrolled(const DiffusionBilevelProblem& problem, const ParamVector& theta0,
                                      const ParamVector& eta, double alpha);

/// Strongly convex inner problem:
///   L_inner(theta; eta) = 1/2 theta^T A theta - (b + M eta)^T theta
///   L_val(theta)        = 1/2 (theta - theta_v)^T V (theta - theta_v)
struct QuadraticFixture {
  Eigen::MatrixXd A;  // SPD inner Hessian
  Eigen::VectorXd b;
  Eigen::MatrixXd M;  // eta -> linear term
  Eigen::MatrixXd V;  // PSD validation curvature
  Eigen::VectorXd theta_v;

  /// A has eigenvalues drawn uniformly from [mu, lmax].
  static QuadraticFixture random(int n_theta, int n_eta, double mu, double lmax, Rng& rng);

  double min_eigenvalue() const;
  double max_eigenvalue() const;
  /// Exact inner optimum A^{-1} (b + M eta).
  Eigen::VectorXd optimum(std::span<const double> eta) const;
  double objective(std::span<const double> eta) const;
};

class QuadraticProblem final : public InnerProblem {
 public:
  explicit QuadraticProblem(const QuadraticFixture& fixture) : f_(fixture) {}

  std::size_t theta_dim() const override { return static_cast<std::size_t>(f_.A.rows()); }
  std::size_t eta_dim() const override { return static_cast<std::size_t>(f_.M.cols()); }
  int max_steps() const override { return 1 << 30; }

  double inner_loss(int step, std::span<const double> theta, std::span<const double> eta,
                    std::span<double> grad_theta) const override;
  void inner_hvp(int step, std::span<const double> theta, std::span<const double> eta, std::span<const double> v,
                 std::span<double> h_theta, std::span<double> h_eta) const override;
  double val_loss(std::span<const double> theta, std::span<double> grad_theta) const override;

 private:
  const QuadraticFixture& f_;
};

/// Implicit-function meta-gradient at the exact inner optimum:
///   -(d/d eta grad_theta L_inner)^T (hess_theta L_inner)^{-1} grad_theta L_val(theta*).
/// Throws NumericalAbort when the Hessian is not positive definite.
std::vector<double> implicit_meta_gradient(const QuadraticFixture& fixture, std::span<const double> eta);

/// First-order prediction of a single inner step's effect on L_val, and the realized change.
struct AlignmentCheck {
  double predicted = 0.0;  // -alpha <grad L_val, grad L_inner>
  double actual = 0.0;     // L_val(theta - alpha grad L_inner) - L_val(theta)

  double residual() const { return std::abs(actual - predicted); }
};

AlignmentCheck alignment_check(const InnerProblem& problem, int step, std::span<const double> theta,
                               std::span<const double> eta, double alpha);

/// -alpha * sum_g sum_k (w_gk / B) <grad L_val(theta), grad l_gk(theta)>, accumulated per noise instance.
double alignment_prediction(const DiffusionBilevelProblem& problem, int step, const ParamVector& theta,
                            const ParamVector& eta, double alpha);

}  // namespace noisegauge
