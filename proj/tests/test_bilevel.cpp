// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "bilevel_fixtures.hpp"
#include "noisegauge/errors.hpp"
#include "support.hpp"

using namespace noisegauge;

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// inner: theta_1 + 0 * eta; val: theta_2 + theta_1^2 / 2. Gradients are orthogonal at the origin.
class OrthogonalStub final : public InnerProblem {
 public:
  std::size_t theta_dim() const override { return 2; }
  std::size_t eta_dim() const override { return 1; }
  int max_steps() const override { return 1; }
  double inner_loss(int, std::span<const double> th, std::span<const double>, std::span<double> g) const override {
    if (!g.empty()) g[0] += 1.0;
    return th[0];
  }
  void inner_hvp(int, std::span<const double>, std::span<const double>, std::span<const double>, std::span<double> ht,
                 std::span<double> he) const override {
    std::fill(ht.begin(), ht.end(), 0.0);
    std::fill(he.begin(), he.end(), 0.0);
  }
  double val_loss(std::span<const double> th, std::span<double> g) const override {
    if (!g.empty()) {
      g[0] += th[0];
      g[1] += 1.0;
    }
    return th[1] + 0.5 * th[0] * th[0];
  }
};

// Finite until step `bad`, where the inner loss turns NaN.
class PoisonedStub final : public InnerProblem {
 public:
  explicit PoisonedStub(int bad) : bad_(bad) {}
  std::size_t theta_dim() const override { return 1; }
  std::size_t eta_dim() const override { return 1; }
  int max_steps() const override { return 10; }
  double inner_loss(int step, std::span<const double> th, std::span<const double>, std::span<double> g) const override {
    if (!g.empty()) g[0] += step == bad_ ? std::nan("") : th[0];
    return step == bad_ ? std::nan("") : 0.5 * th[0] * th[0];
  }
  void inner_hvp(int, std::span<const double>, std::span<const double>, std::span<const double> v, std::span<double> ht,
                 std::span<double> he) const override {
    ht[0] = v[0];
    he[0] = 0.0;
  }
  double val_loss(std::span<const double> th, std::span<double> g) const override {
    if (!g.empty()) g[0] += th[0];
    return 0.5 * th[0] * th[0];
  }

 private:
  int bad_;
};

QuadraticFixture hand_fixture() {
  QuadraticFixture f;
  f.A = Eigen::Matrix2d{{2.0, 0.5}, {0.5, 1.0}};
  f.b = Eigen::Vector2d{1.0, -1.0};
  f.M = Eigen::Matrix2d{{1.0, 0.0}, {0.0, 2.0}};
  f.V = Eigen::Matrix2d::Identity();
  f.theta_v = Eigen::Vector2d{0.0, 1.0};
  return f;
}

}  // namespace

TEST_CASE("inner loop: alpha = 0 leaves theta unchanged") {
  ngtest::TinyBilevel tb(1, 3, 2, 2);
  const auto p = tb.problem();
  const auto traj = inner_loop(p, tb.theta0, tb.eta, 0.0);
  CHECK(traj.theta_steps.size() == 4);
  CHECK(traj.final_theta() == tb.theta0.values);
  CHECK(traj.inner_losses.size() == 3);
}

TEST_CASE("inner loop: one step on a 2-parameter quadratic, by hand") {
  const auto f = hand_fixture();
  const QuadraticProblem p(f);
  const std::vector<double> theta0{1.0, 2.0}, eta{0.5, -0.25};
  // grad = A theta - b - M eta = (2+1-1-0.5, 0.5+2+1+0.5) = (1.5, 4)
  const auto traj = inner_loop(p, theta0, eta, 1, 0.1);
  CHECK(traj.final_theta()[0] == doctest::Approx(1.0 - 0.15).epsilon(1e-15));
  CHECK(traj.final_theta()[1] == doctest::Approx(2.0 - 0.4).epsilon(1e-15));
  // L = 1/2 theta^T A theta - (b + M eta)^T theta = 1/2 (2 + 2 + 4) - (1.5*1 + (-1.5)*2) = 4 + 1.5
  CHECK(traj.inner_losses[0] == doctest::Approx(5.5).epsilon(1e-15));
}

TEST_CASE("inner loop: trajectory replays exactly and descends on the quadratic") {
  Rng rng = make_rng(3);
  const auto f = QuadraticFixture::random(6, 3, 0.5, 4.0, rng);
  const QuadraticProblem p(f);
  const std::vector<double> theta0(6, 1.0), eta{0.3, -0.2, 0.1};
  const double alpha = 0.5 / f.max_eigenvalue();
  const auto traj = inner_loop(p, theta0, eta, 50, alpha);
  for (int s = 0; s < 50; ++s) {
    std::vector<double> g(6, 0.0);
    p.inner_loss(s, traj.theta_steps[s], eta, g);
    for (int i = 0; i < 6; ++i) CHECK(traj.theta_steps[s + 1][i] == traj.theta_steps[s][i] - alpha * g[i]);
    if (s > 0) CHECK(traj.inner_losses[s] <= traj.inner_losses[s - 1]);
  }
  CHECK_THROWS_AS(inner_loop(p, theta0, eta, 0, alpha), ConfigError);
  CHECK_THROWS_AS(inner_loop(p, theta0, eta, 2, -1.0), ConfigError);
}

TEST_CASE("inner loop: non-finite loss aborts with the step index") {
  const PoisonedStub p(2);
  const std::vector<double> th{1.0}, eta{0.0};
  try {
    inner_loop(p, th, eta, 5, 0.1);
    FAIL("expected an abort");
  } catch (const NumericalAbort& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
  CHECK_THROWS_AS(meta_gradient_unrolled(p, th, eta, 5, 0.1), NumericalAbort);
}

TEST_CASE("hvp: matches finite differences of the analytic gradient") {
  ngtest::TinyBilevel tb(4, 1, 3, 3);
  const auto p = tb.problem();
  std::mt19937_64 rng(4);
  const auto v = ngtest::randn(rng, p.theta_dim());
  std::vector<double> ht(p.theta_dim()), he(p.eta_dim());
  p.inner_hvp(0, tb.theta0.values, tb.eta.values, v, ht, he);
  const double h = 1e-5;
  std::vector<double> tp(tb.theta0.values), tm(tb.theta0.values);
  for (std::size_t i = 0; i < v.size(); ++i) {
    tp[i] += h * v[i];
    tm[i] -= h * v[i];
  }
  std::vector<double> gtp(p.theta_dim()), gtm(p.theta_dim()), gep(p.eta_dim()), gem(p.eta_dim());
  p.inner_grads(0, tp, tb.eta.values, gtp, gep);
  p.inner_grads(0, tm, tb.eta.values, gtm, gem);
  std::vector<double> fdt(p.theta_dim()), fde(p.eta_dim());
  for (std::size_t i = 0; i < fdt.size(); ++i) fdt[i] = (gtp[i] - gtm[i]) / (2 * h);
  for (std::size_t i = 0; i < fde.size(); ++i) fde[i] = (gep[i] - gem[i]) / (2 * h);
  CHECK(ngtest::max_rel_err(ht, fdt, ngtest::rel_floor(fdt)) <= 1e-5);
  CHECK(ngtest::max_rel_err(he, fde, ngtest::rel_floor(fde)) <= 1e-5);
}

TEST_CASE("meta-gradient: K = 1 leaves the rater without influence") {
  ngtest::TinyBilevel tb(5, 2, 3, 1);
  const auto p = tb.problem();
  const auto rep = meta_gradient_unrolled(p, tb.theta0, tb.eta, 0.1);
  for (double g : rep.grad_eta) CHECK(g == 0.0);
  const auto fd = meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1);
  for (double g : fd) CHECK(g == 0.0);
}

TEST_CASE("meta-gradient: tiny networks agree with central differences") {
  ngtest::TinyBilevel probe(0, 2, 2, 2);
  CHECK(probe.theta0.size() <= 50);
  CHECK(probe.eta.size() <= 50);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ngtest::TinyBilevel tb(seed, 2, 2, 2);
    const auto p = tb.problem();
    const auto rep = meta_gradient_unrolled(p, tb.theta0, tb.eta, 0.1);
    const auto fd = meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1, 1e-5);
    CHECK(ngtest::max_abs(fd) > 0.0);
    CHECK(ngtest::max_rel_err(rep.grad_eta, fd, ngtest::rel_floor(fd)) <= 1e-4);
  }
}

TEST_CASE("meta-gradient: scaling the validation loss by 2 doubles the gradient exactly") {
  ngtest::TinyBilevel tb(6, 2, 2, 3);
  const auto a = meta_gradient_unrolled(tb.problem(1.0), tb.theta0, tb.eta, 0.1);
  const auto b = meta_gradient_unrolled(tb.problem(2.0), tb.theta0, tb.eta, 0.1);
  for (std::size_t i = 0; i < a.grad_eta.size(); ++i) CHECK(b.grad_eta[i] == 2.0 * a.grad_eta[i]);
  CHECK(b.val_loss_after == 2.0 * a.val_loss_after);
}

TEST_CASE("meta-gradient: report contents and replay determinism") {
  ngtest::TinyBilevel x(7, 3, 2, 4), y(7, 3, 2, 4);
  const auto a = meta_gradient_unrolled(x.problem(), x.theta0, x.eta, 0.05);
  const auto b = meta_gradient_unrolled(y.problem(), y.theta0, y.eta, 0.05);
  CHECK(a.grad_eta == b.grad_eta);
  CHECK(a.final_theta == b.final_theta);
  CHECK(a.inner_losses == b.inner_losses);
  CHECK(a.inner_losses.size() == 3);
  REQUIRE(a.per_step_weights.size() == 3);
  for (const auto& step : a.per_step_weights) {
    REQUIRE(step.size() == 2);
    for (const auto& w : step) {
      CHECK(w.size() == 4);
      double s = 0.0;
      for (double v : w) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
  for (double g : a.grad_eta) CHECK(std::isfinite(g));
  CHECK(a.grad_eta.size() == x.eta.size());
  const auto traj = inner_loop(x.problem(), x.theta0, x.eta, 0.05);
  CHECK(a.final_theta == traj.final_theta());
  const auto j = to_json(a);
  CHECK(j.at("grad_eta").size() == a.grad_eta.size());
  CHECK(j.contains("val_loss_before"));
  CHECK(j.contains("val_loss_after"));
  CHECK(j.contains("per_step_weights"));
}

TEST_CASE("finite differences: constant objective, bad step, Richardson behaviour") {
  ngtest::TinyBilevel tb(8, 2, 2, 2);
  const auto p = tb.problem();
  CHECK_THROWS_AS(meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1, 0.0), ConfigError);
  CHECK_THROWS_AS(meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1, -1e-3), ConfigError);
  // central differences have O(h^2) truncation: successive differences shrink about 4x per halving
  const auto f1 = meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1, 4e-2);
  const auto f2 = meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1, 2e-2);
  const auto f3 = meta_gradient_fd(p, tb.theta0.values, tb.eta.values, 2, 0.1, 1e-2);
  double d12 = 0.0, d23 = 0.0;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    d12 += (f1[i] - f2[i]) * (f1[i] - f2[i]);
    d23 += (f2[i] - f3[i]) * (f2[i] - f3[i]);
  }
  const double ratio = std::sqrt(d12 / d23);
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("implicit gradient: hand 2x2 case with identity curvature and mixing") {
  QuadraticFixture f;
  f.A = Eigen::Matrix2d::Identity();
  f.M = Eigen::Matrix2d::Identity();
  f.V = Eigen::Matrix2d::Identity();
  f.b = Eigen::Vector2d{1.0, 2.0};
  f.theta_v = Eigen::Vector2d{0.0, 1.0};
  const std::vector<double> eta{0.5, -1.0};
  // theta* = b + eta = (1.5, 1); J = 1/2 |theta* - theta_v|^2, grad = theta* - theta_v
  const auto g = implicit_meta_gradient(f, eta);
  CHECK(g[0] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("implicit gradient: zero validation gradient at the optimum gives zero") {
  Rng rng = make_rng(9);
  auto f = QuadraticFixture::random(5, 3, 0.5, 3.0, rng);
  const std::vector<double> eta{0.2, 0.4, -0.7};
  f.theta_v = f.optimum(eta);
  for (double v : implicit_meta_gradient(f, eta)) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("implicit gradient: rejects a Hessian that is not positive definite") {
  auto f = hand_fixture();
  f.A = Eigen::Matrix2d{{1.0, 0.0}, {0.0, 0.0}};
  CHECK_THROWS_AS(implicit_meta_gradient(f, std::vector<double>{0.0, 0.0}), NumericalAbort);
  f.A = Eigen::Matrix2d{{1.0, 0.0}, {0.0, -1.0}};
  CHECK_THROWS_AS(implicit_meta_gradient(f, std::vector<double>{0.0, 0.0}), NumericalAbort);
}

TEST_CASE("implicit gradient: long unrolls converge to the implicit formula") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed, 1);
    const auto f = QuadraticFixture::random(8, 4, 0.5, 2.0, rng);
    CHECK(f.min_eigenvalue() == doctest::Approx(0.5).epsilon(1e-10));
    const QuadraticProblem p(f);
    const auto eta = ngtest::randn(rng, 4);
    const std::vector<double> theta0(8, 0.0);
    const auto unrolled = meta_gradient_unrolled(p, theta0, eta, 500, 0.1 / f.max_eigenvalue());
    const auto implicit = implicit_meta_gradient(f, eta);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < implicit.size(); ++i) {
      num += (unrolled.grad_eta[i] - implicit[i]) * (unrolled.grad_eta[i] - implicit[i]);
      den += implicit[i] * implicit[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-3);
  }
}

TEST_CASE("quadratic: unrolled gradient matches differences and a meta step descends") {
  Rng rng = make_rng(12);
  const auto f = QuadraticFixture::random(5, 3, 0.3, 2.0, rng);
  const QuadraticProblem p(f);
  const std::vector<double> theta0(5, 0.5), eta{0.1, -0.3, 0.2};
  const double alpha = 0.2;
  const auto rep = meta_gradient_unrolled(p, theta0, eta, 20, alpha);
  const auto fd = meta_gradient_fd(p, theta0, eta, 20, alpha, 1e-5);
  CHECK(ngtest::max_rel_err(rep.grad_eta, fd, ngtest::rel_floor(fd)) <= 1e-6);
  std::vector<double> stepped(eta);
  for (std::size_t i = 0; i < eta.size(); ++i) stepped[i] -= 1e-2 * rep.grad_eta[i];
  CHECK(unrolled_objective(p, theta0, stepped, 20, alpha) <= unrolled_objective(p, theta0, eta, 20, alpha));
  // the exact optimum objective too
  const auto g = implicit_meta_gradient(f, eta);
  std::vector<double> s2(eta);
  for (std::size_t i = 0; i < eta.size(); ++i) s2[i] -= 1e-2 * g[i];
  CHECK(f.objective(s2) <= f.objective(eta));
  CHECK(to_vec(f.optimum(eta)).size() == 5);
}

TEST_CASE("alignment: zero step and orthogonal gradients") {
  ngtest::TinyBilevel tb(10, 1, 4, 2);
  const auto p = tb.problem();
  const auto zero = alignment_check(p, 0, tb.theta0.values, tb.eta.values, 0.0);
  CHECK(zero.predicted == 0.0);
  CHECK(zero.actual == 0.0);
  CHECK(alignment_prediction(p, 0, tb.theta0, tb.eta, 0.0) == 0.0);

  const OrthogonalStub stub;
  const std::vector<double> th{0.0, 0.0}, eta{0.0};
  for (double a : {0.1, 0.05, 0.025}) {
    const auto c = alignment_check(stub, 0, th, eta, a);
    CHECK(c.predicted == 0.0);
    CHECK(c.actual == doctest::Approx(0.5 * a * a).epsilon(1e-12));
  }
}

TEST_CASE("alignment: per-instance prediction equals the inner product form") {
  ngtest::TinyBilevel tb(11, 1, 4, 3, 8);
  const auto p = tb.problem();
  const auto c = alignment_check(p, 0, tb.theta0.values, tb.eta.values, 0.01);
  const double per_instance = alignment_prediction(p, 0, tb.theta0, tb.eta, 0.01);
  CHECK(per_instance == doctest::Approx(c.predicted).epsilon(1e-10));
}

TEST_CASE("alignment: residual shrinks about 4x when alpha halves") {
  double ratio_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    ngtest::TinyBilevel tb(100 + seed, 1, 8, 4, 16);
    const auto p = tb.problem();
    const auto big = alignment_check(p, 0, tb.theta0.values, tb.eta.values, 0.02);
    const auto small = alignment_check(p, 0, tb.theta0.values, tb.eta.values, 0.01);
    ratio_sum += big.residual() / small.residual();
  }
  const double ratio = ratio_sum / 16.0;
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 5.0);
}
