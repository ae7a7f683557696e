// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/bilevel.hpp"

#include <cmath>
#include <string>

#include "noisegauge/dual.hpp"
#include "noisegauge/errors.hpp"

namespace noisegauge {

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

}  // namespace

nlohmann::json to_json(const MetaGradReport& r) {
  return {{"grad_eta", r.grad_eta},
          {"val_loss_before", r.val_loss_before},
          {"val_loss_after", r.val_loss_after},
          {"inner_losses", r.inner_losses},
          {"per_step_weights", r.per_step_weights}};
}

InnerTrajectory inner_loop(const InnerProblem& problem, std::span<const double> theta0, std::span<const double> eta,
                           int S, double alpha) {
  if (S < 1) throw ConfigError("inner loop needs S >= 1");
  if (alpha < 0.0) throw ConfigError("inner learning rate must be nonnegative");
  if (S > problem.max_steps()) throw ConfigError("inner loop has fewer batches than steps");
  if (theta0.size() != problem.theta_dim() || eta.size() != problem.eta_dim())
    throw ConfigError("inner loop parameter dimensions do not match the problem");

  InnerTrajectory traj;
  traj.alpha = alpha;
  traj.theta_steps.emplace_back(theta0.begin(), theta0.end());
  std::vector<double> grad(theta0.size());
  for (int s = 0; s < S; ++s) {
    const auto& theta = traj.theta_steps.back();
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = problem.inner_loss(s, theta, eta, grad);
    if (!std::isfinite(loss) || !all_finite(grad))
      throw NumericalAbort("non-finite inner loss or gradient at inner step " + std::to_string(s));
    traj.inner_losses.push_back(loss);
    std::vector<double> next(theta.size());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = theta[i] - alpha * grad[i];
    traj.theta_steps.push_back(std::move(next));
  }
  return traj;
}

MetaGradReport meta_gradient_unrolled(const InnerProblem& problem, std::span<const double> theta0,
                                      std::span<const double> eta, int S, double alpha) {
  const auto traj = inner_loop(problem, theta0, eta, S, alpha);
  MetaGradReport rep;
  rep.inner_losses = traj.inner_losses;
  rep.final_theta = traj.final_theta();
  rep.val_loss_before = problem.val_loss(theta0, {});

  std::vector<double> theta_bar(problem.theta_dim(), 0.0);
  rep.val_loss_after = problem.val_loss(traj.final_theta(), theta_bar);
  if (!std::isfinite(rep.val_loss_after) || !all_finite(theta_bar))
    throw NumericalAbort("non-finite validation loss or gradient after inner step " + std::to_string(S));

  rep.grad_eta.assign(problem.eta_dim(), 0.0);
  std::vector<double> h_theta(problem.theta_dim()), h_eta(problem.eta_dim());
  for (int s = S - 1; s >= 0; --s) {
    problem.inner_hvp(s, traj.theta_steps[static_cast<std::size_t>(s)], eta, theta_bar, h_theta, h_eta);
    if (!all_finite(h_theta) || !all_finite(h_eta))
      throw NumericalAbort("non-finite Hessian-vector product at inner step " + std::to_string(s));
    for (std::size_t j = 0; j < h_eta.size(); ++j) rep.grad_eta[j] -= alpha * h_eta[j];
    for (std::size_t i = 0; i < h_theta.size(); ++i) theta_bar[i] -= alpha * h_theta[i];
  }
  return rep;
}

double unrolled_objective(const InnerProblem& problem, std::span<const double> theta0, std::span<const double> eta,
                          int S, double alpha) {
  const auto traj = inner_loop(problem, theta0, eta, S, alpha);
  return problem.val_loss(traj.final_theta(), {});
}

std::vector<double> meta_gradient_fd(const InnerProblem& problem, std::span<const double> theta0,
                                     std::span<const double> eta, int S, double alpha, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::vector<double> e(eta.begin(), eta.end());
  std::vector<double> g(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double orig = e[i];
    e[i] = orig + h;
    const double jp = unrolled_objective(problem, theta0, e, S, alpha);
    e[i] = orig - h;
    const double jm = unrolled_objective(problem, theta0, e, S, alpha);
    e[i] = orig;
    g[i] = (jp - jm) / (2.0 * h);
  }
  return g;
}

DiffusionBilevelProblem::DiffusionBilevelProblem(const Denoiser& denoiser, const Rater& rater,
                                                 const NoiseSchedule& sched, std::vector<GroupedBatch> batches,
                                                 GroupedBatch val_batch, double val_scale)
    : denoiser_(denoiser),
      rater_(rater),
      sched_(sched),
      batches_(std::move(batches)),
      val_batch_(std::move(val_batch)),
      val_scale_(val_scale) {}

double DiffusionBilevelProblem::inner_loss(int step, std::span<const double> theta, std::span<const double> eta,
                                           std::span<double> grad_theta) const {
  return weighted_inner_loss<double>(denoiser_, theta, &rater_, eta, batch(step), sched_, grad_theta, {});
}

double DiffusionBilevelProblem::inner_grads(int step, std::span<const double> theta, std::span<const double> eta,
                                            std::span<double> grad_theta, std::span<double> grad_eta) const {
  return weighted_inner_loss<double>(denoiser_, theta, &rater_, eta, batch(step), sched_, grad_theta, grad_eta);
}

void DiffusionBilevelProblem::inner_hvp(int step, std::span<const double> theta, std::span<const double> eta,
                                        std::span<const double> v, std::span<double> h_theta,
                                        std::span<double> h_eta) const {
  std::vector<Dual> th(theta.size()), et(eta.size());
  for (std::size_t i = 0; i < th.size(); ++i) th[i] = Dual(theta[i], v[i]);
  for (std::size_t j = 0; j < et.size(); ++j) et[j] = Dual(eta[j], 0.0);
  std::vector<Dual> gt(th.size()), ge(et.size());
  weighted_inner_loss<Dual>(denoiser_, th, &rater_, et, batch(step), sched_, gt, ge);
  for (std::size_t i = 0; i < gt.size(); ++i) h_theta[i] = gt[i].d;
  for (std::size_t j = 0; j < ge.size(); ++j) h_eta[j] = ge[j].d;
}

double DiffusionBilevelProblem::val_loss(std::span<const double> theta, std::span<double> grad_theta) const {
  const double loss = weighted_inner_loss<double>(denoiser_, theta, nullptr, {}, val_batch_, sched_, grad_theta, {});
  if (val_scale_ != 1.0)
    for (double& g : grad_theta) g *= val_scale_;
  return val_scale_ * loss;
}

InnerTrajectory inner_loop(const DiffusionBilevelProblem& problem, const ParamVector& theta0, const ParamVector& eta,
                           double alpha) {
  problem.denoiser().check(theta0);
  problem.rater().check(eta);
  return inner_loop(static_cast<const InnerProblem&>(problem), theta0.values, eta.values, problem.max_steps(), alpha);
}

MetaGradReport meta_gradient_unrolled(const DiffusionBilevelProblem& problem, const ParamVector& theta0,
                                      const ParamVector& eta, double alpha) {
  problem.denoiser().check(theta0);
  problem.rater().check(eta);
  auto rep = meta_gradient_unrolled(static_cast<const InnerProblem&>(problem), theta0.values, eta.values,
                                    problem.max_steps(), alpha);
  for (int s = 0; s < problem.max_steps(); ++s)
    rep.per_step_weights.push_back(batch_weights(problem.rater(), eta, problem.batch(s), problem.schedule()));
  return rep;
}

QuadraticFixture QuadraticFixture::random(int n_theta, int n_eta, double mu, double lmax, Rng& rng) {
  if (!(mu > 0.0 && lmax >= mu)) throw ConfigError("fixture needs 0 < mu <= lmax");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> spec(mu, lmax);
  auto gaussian = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = normal(rng);
    return m;
  };
  QuadraticFixture f;
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(n_theta, n_theta));
  const Eigen::MatrixXd Q = qr.householderQ();
  Eigen::VectorXd ev(n_theta);
  for (int i = 0; i < n_theta; ++i) ev(i) = spec(rng);
  ev(0) = mu;
  if (n_theta > 1) ev(1) = lmax;
  f.A = Q * ev.asDiagonal() * Q.transpose();
  f.A = 0.5 * (f.A + f.A.transpose());
  f.b = gaussian(n_theta, 1);
  f.M = gaussian(n_theta, n_eta);
  const Eigen::MatrixXd R = gaussian(n_theta, n_theta);
  f.V = R * R.transpose() / n_theta + Eigen::MatrixXd::Identity(n_theta, n_theta);
  f.theta_v = gaussian(n_theta, 1);
  return f;
}

double QuadraticFixture::min_eigenvalue() const {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

double QuadraticFixture::max_eigenvalue() const {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

Eigen::VectorXd QuadraticFixture::optimum(std::span<const double> eta) const {
  return A.ldlt().solve(b + M * as_eigen(eta));
}

double QuadraticFixture::objective(std::span<const double> eta) const {
  const Eigen::VectorXd r = optimum(eta) - theta_v;
  return 0.5 * r.dot(V * r);
}

double QuadraticProblem::inner_loss(int, std::span<const double> theta, std::span<const double> eta,
                                    std::span<double> grad_theta) const {
  const auto th = as_eigen(theta);
  const Eigen::VectorXd lin = f_.b + f_.M * as_eigen(eta);
  if (!grad_theta.empty()) {
    const Eigen::VectorXd g = f_.A * th - lin;
    for (std::size_t i = 0; i < grad_theta.size(); ++i) grad_theta[i] += g(static_cast<Eigen::Index>(i));
  }
  return 0.5 * th.dot(f_.A * th) - lin.dot(th);
}

void QuadraticProblem::inner_hvp(int, std::span<const double>, std::span<const double>, std::span<const double> v,
                                 std::span<double> h_theta, std::span<double> h_eta) const {
  // grad_theta L = A theta - b - M eta, so H_tt = A and H_et = -M^T.
  const Eigen::VectorXd ht = f_.A * as_eigen(v);
  const Eigen::VectorXd he = -f_.M.transpose() * as_eigen(v);
  for (std::size_t i = 0; i < h_theta.size(); ++i) h_theta[i] = ht(static_cast<Eigen::Index>(i));
  for (std::size_t j = 0; j < h_eta.size(); ++j) h_eta[j] = he(static_cast<Eigen::Index>(j));
}

double QuadraticProblem::val_loss(std::span<const double> theta, std::span<double> grad_theta) const {
  const Eigen::VectorXd r = as_eigen(theta) - f_.theta_v;
  const Eigen::VectorXd g = f_.V * r;
  for (std::size_t i = 0; i < grad_theta.size(); ++i) grad_theta[i] += g(static_cast<Eigen::Index>(i));
  return 0.5 * r.dot(g);
}

std::vector<double> implicit_meta_gradient(const QuadraticFixture& f, std::span<const double> eta) {
  if (static_cast<Eigen::Index>(eta.size()) != f.M.cols()) throw ConfigError("eta dimension does not match fixture");
  const Eigen::MatrixXd& H = f.A;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(lmin > 1e-12 * std::max(1.0, lmax)))
    throw NumericalAbort("inner Hessian is not positive definite; strong convexity fails");

  const Eigen::VectorXd theta_star = H.ldlt().solve(f.b + f.M * as_eigen(eta));
  const Eigen::VectorXd g_val = f.V * (theta_star - f.theta_v);
  const Eigen::MatrixXd mixed = -f.M;  // d(grad_theta L_inner)/d eta
  const Eigen::VectorXd g = -mixed.transpose() * H.inverse() * g_val;
  return {g.data(), g.data() + g.size()};
}

AlignmentCheck alignment_check(const InnerProblem& problem, int step, std::span<const double> theta,
                               std::span<const double> eta, double alpha) {
  std::vector<double> g_in(theta.size(), 0.0), g_val(theta.size(), 0.0);
  problem.inner_loss(step, theta, eta, g_in);
  const double before = problem.val_loss(theta, g_val);
  std::vector<double> next(theta.size());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] = theta[i] - alpha * g_in[i];
  AlignmentCheck c;
  c.predicted = -alpha * dot(g_val, g_in);
  c.actual = problem.val_loss(next, {}) - before;
  return c;
}

double alignment_prediction(const DiffusionBilevelProblem& problem, int step, const ParamVector& theta,
                            const ParamVector& eta, double alpha) {
  const auto& denoiser = problem.denoiser();
  const auto& sched = problem.schedule();
  const auto& batch = problem.batch(step);
  std::vector<double> g_val(theta.size(), 0.0);
  problem.val_loss(theta.values, g_val);
  const auto weights = batch_weights(problem.rater(), eta, batch, sched);

  double sum = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t gi = 0; gi < batch.size(); ++gi) {
    const auto& g = batch.groups[gi];
    for (std::size_t k = 0; k < g.noises.size(); ++k) {
      const auto x_t = q_sample(g.x0, g.t, g.noises[k], sched);
      const auto eps_hat = denoiser.predict(theta, x_t, sched.normalized(g.t), g.cond);
      std::vector<double> up(eps_hat.size());
      for (std::size_t i = 0; i < up.size(); ++i) up[i] = 2.0 * (eps_hat[i] - g.noises[k][i]);
      const auto g_k = denoiser.grad_params(theta, x_t, sched.normalized(g.t), g.cond, up);
      sum += weights[gi][k] * inv_b * dot(g_val, g_k.values);
    }
  }
  return -alpha * sum;
}

}  // namespace noisegauge
