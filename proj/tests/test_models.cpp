// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "noisegauge/container.hpp"
#include "noisegauge/dual.hpp"
#include "noisegauge/errors.hpp"
#include "noisegauge/models.hpp"
#include "support.hpp"

using namespace noisegauge;

namespace {

std::vector<double> dvec(std::mt19937_64& rng, std::size_t n) { return ngtest::randn(rng, n); }

CondToken random_cond(std::mt19937_64& rng, int C) {
  const int c = static_cast<int>(rng() % static_cast<unsigned>(C + 1)) - 1;
  return c < 0 ? CondToken::null() : CondToken::label(c);
}

// randomizes biases and class embeddings too, so every slot carries signal
ParamVector randomized(ParamVector p, std::mt19937_64& rng, double scale) {
  for (auto& v : p.values) v += ngtest::randn(rng, 1, scale)[0];
  return p;
}

}  // namespace

TEST_CASE("time embedding: zero, determinism, odd dim") {
  const auto e = time_embedding(0.0, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(e[2 * i] == 0.0);
    CHECK(e[2 * i + 1] == 1.0);
  }
  CHECK(time_embedding(0.37, 16) == time_embedding(0.37, 16));
  CHECK_THROWS_AS(time_embedding(0.5, 5), ConfigError);
  CHECK_THROWS_AS(time_embedding(0.5, 0), ConfigError);
}

TEST_CASE("time embedding: direct formula at t=0.5, dim=4") {
  const auto e = time_embedding(0.5, 4);
  const double a0 = 1000.0 * 0.5, a1 = 1000.0 * 0.5 / 100.0;  // 10000^(-1/2) = 1/100
  CHECK(std::abs(e[0] - std::sin(a0)) <= 1e-12);
  CHECK(std::abs(e[1] - std::cos(a0)) <= 1e-12);
  CHECK(std::abs(e[2] - std::sin(a1)) <= 1e-12);
  CHECK(std::abs(e[3] - std::cos(a1)) <= 1e-12);
}

TEST_CASE("denoiser: default parameter count") {
  // (34+32)*128+128 + 128*128+128 + 128*2+2 + 5*32 with d=2, C=4
  const Denoiser net(DenoiserArch{2, 4, 32, 32, {128, 128}});
  CHECK(net.layout().total() == 66 * 128 + 128 + 128 * 128 + 128 + 256 + 2 + 5 * 32);
  const Rater rater(RaterArch{2, 4, 32, 32, {64, 64}});
  CHECK(rater.layout().total() == 68 * 64 + 64 + 64 * 64 + 64 + 64 + 1 + 5 * 32);
  // the null row exists for unconditional data
  const Denoiser unc(DenoiserArch{2, 0, 32, 32, {128, 128}});
  CHECK(unc.layout().slot("class_emb").shape[0] == 1);
}

TEST_CASE("denoiser: affine degenerate case returns the output bias") {
  const Denoiser net(DenoiserArch{2, 2, 8, 4, {16, 16}});
  ParamVector theta(net.layout());
  auto b = theta.slice("out.b");
  b[0] = 0.75;
  b[1] = -2.5;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    const auto y = net.predict(theta, dvec(rng, 2), 0.3 * i / 10.0, random_cond(rng, 2));
    CHECK(y == std::vector<double>{0.75, -2.5});
  }
}

TEST_CASE("denoiser: purity and straight-line oracle") {
  const Denoiser net(DenoiserArch{2, 4, 32, 32, {128, 128}});
  std::mt19937_64 rng(2);
  const auto theta = randomized(net.init_params(9), rng, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = dvec(rng, 2);
    const double t = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto cond = random_cond(rng, 4);
    const auto y = net.predict(theta, x, t, cond);
    CHECK(y == net.predict(theta, x, t, cond));
    const auto want = ngtest::mlp_oracle(theta, x, t, 32, cond.row(4));
    for (int i = 0; i < 2; ++i) CHECK(std::abs(y[i] - want[i]) <= 1e-12 * std::max(1.0, std::abs(want[i])));
  }
}

TEST_CASE("denoiser: layout mismatch is rejected") {
  const Denoiser a(DenoiserArch{2, 4, 8, 4, {16}});
  const Denoiser b(DenoiserArch{2, 4, 8, 4, {17}});
  const auto theta = b.init_params(1);
  CHECK_THROWS_AS(a.predict(theta, std::vector<double>{0, 0}, 0.1, CondToken::null()), ConfigError);
  CHECK_THROWS_AS(a.predict(a.init_params(1), std::vector<double>{0, 0}, 0.1, CondToken::label(4)), ConfigError);
}

TEST_CASE("rater: degenerate bias, permutation and oracle") {
  const Rater rater(RaterArch{2, 4, 32, 32, {64, 64}});
  std::mt19937_64 rng(3);
  ParamVector flat(rater.layout());
  flat.slice("out.b")[0] = 1.5;
  CHECK(rater.score(flat, dvec(rng, 2), 0.5, dvec(rng, 2), CondToken::label(1)) == 1.5);

  const auto eta = randomized(rater.init_params(4), rng, 0.05);
  const auto x0 = dvec(rng, 2);
  std::vector<std::vector<double>> noises;
  for (int k = 0; k < 4; ++k) noises.push_back(dvec(rng, 2));
  std::vector<double> s, sp;
  for (int k = 0; k < 4; ++k) s.push_back(rater.score(eta, noises[k], 0.2, x0, CondToken::label(3)));
  std::swap(noises[0], noises[2]);
  for (int k = 0; k < 4; ++k) sp.push_back(rater.score(eta, noises[k], 0.2, x0, CondToken::label(3)));
  CHECK(sp[0] == s[2]);
  CHECK(sp[2] == s[0]);
  CHECK(sp[1] == s[1]);
  CHECK(sp[3] == s[3]);

  for (int trial = 0; trial < 20; ++trial) {
    const auto eps = dvec(rng, 2), x = dvec(rng, 2);
    const double t = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto cond = random_cond(rng, 4);
    std::vector<double> in = eps;
    in.insert(in.end(), x.begin(), x.end());
    const double want = ngtest::mlp_oracle(eta, in, t, 32, cond.row(4))[0];
    const double got = rater.score(eta, eps, t, x, cond);
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("rater: input ablations drop the corresponding blocks") {
  std::mt19937_64 rng(5);
  const Rater noise_only(RaterArch{2, 4, 8, 4, {8}, false, false, false});
  CHECK(noise_only.net().input_dim() == 2);
  const auto eta = randomized(noise_only.init_params(1), rng, 0.1);
  const auto eps = dvec(rng, 2);
  const double a = noise_only.score(eta, eps, 0.1, dvec(rng, 2), CondToken::label(0));
  const double b = noise_only.score(eta, eps, 0.9, dvec(rng, 2), CondToken::null());
  CHECK(a == b);
  CHECK(a == doctest::Approx(ngtest::mlp_oracle(eta, eps, 0.0, 0, -1)[0]).epsilon(1e-13));
}

TEST_CASE("gradients: zero upstream and the linear-layer identity") {
  const Denoiser net(DenoiserArch{2, 2, 4, 2, {}});  // single linear layer over [x, temb, cemb]
  std::mt19937_64 rng(6);
  const auto theta = randomized(net.init_params(1), rng, 0.3);
  const auto x = dvec(rng, 2);
  const auto zero = net.grad_params(theta, x, 0.4, CondToken::label(1), std::vector<double>{0.0, 0.0});
  for (double g : zero.values) CHECK(g == 0.0);

  const std::vector<double> u{0.7, -1.3};
  const auto g = net.grad_params(theta, x, 0.4, CondToken::label(1), u);
  std::vector<double> in = x;
  const auto te = ngtest::sinusoid(0.4, 4);
  in.insert(in.end(), te.begin(), te.end());
  const auto emb = theta.slice("class_emb");
  in.push_back(emb[2]);
  in.push_back(emb[3]);
  const auto gw = g.slice("out.w");
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < in.size(); ++c) CHECK(gw[r * in.size() + c] == doctest::Approx(u[r] * in[c]).epsilon(1e-14));
  CHECK(g.slice("out.b")[0] == u[0]);
  CHECK(g.slice("out.b")[1] == u[1]);
}

TEST_CASE("gradients: denoiser and rater match central differences") {
  const Denoiser net(DenoiserArch{2, 4, 8, 6, {12, 10}});
  const Rater rater(RaterArch{2, 4, 8, 6, {10, 8}});
  std::mt19937_64 rng(7);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    auto theta = randomized(net.init_params(trial), rng, 0.1);
    const auto x = dvec(rng, 2), u = dvec(rng, 2);
    const double t = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto cond = random_cond(rng, 4);
    const auto g = net.grad_params(theta, x, t, cond, u).values;
    std::vector<double> fd(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double keep = theta.values[i];
      theta.values[i] = keep + h;
      const double fp = ngtest::dot(u, net.predict(theta, x, t, cond));
      theta.values[i] = keep - h;
      const double fm = ngtest::dot(u, net.predict(theta, x, t, cond));
      theta.values[i] = keep;
      fd[i] = (fp - fm) / (2 * h);
    }
    CHECK(ngtest::max_rel_err(g, fd, ngtest::rel_floor(fd)) <= 1e-6);

    auto eta = randomized(rater.init_params(trial), rng, 0.1);
    const auto eps = dvec(rng, 2);
    const auto ge = rater.grad_params(eta, eps, t, x, cond, 1.7).values;
    std::vector<double> fde(eta.size());
    for (std::size_t i = 0; i < eta.size(); ++i) {
      const double keep = eta.values[i];
      eta.values[i] = keep + h;
      const double fp = 1.7 * rater.score(eta, eps, t, x, cond);
      eta.values[i] = keep - h;
      const double fm = 1.7 * rater.score(eta, eps, t, x, cond);
      eta.values[i] = keep;
      fde[i] = (fp - fm) / (2 * h);
    }
    CHECK(ngtest::max_rel_err(ge, fde, ngtest::rel_floor(fde)) <= 1e-6);
  }
}

TEST_CASE("gradients: dual-number tangent equals the directional derivative") {
  // forward-mode over the forward pass: d/dh <u, f(theta + h v)> at h = 0
  const Denoiser net(DenoiserArch{2, 3, 8, 4, {10, 10}});
  std::mt19937_64 rng(8);
  const auto theta = randomized(net.init_params(2), rng, 0.1);
  const auto v = dvec(rng, theta.size()), x = dvec(rng, 2), u = dvec(rng, 2);
  std::vector<Dual> td(theta.size());
  for (std::size_t i = 0; i < td.size(); ++i) td[i] = Dual{theta.values[i], v[i]};
  std::vector<Dual> out(2);
  Activations<Dual> act;
  net.predict<Dual>(td, x, 0.6, CondToken::label(2), out, act);
  const double tangent = u[0] * out[0].d + u[1] * out[1].d;
  const auto g = net.grad_params(theta, x, 0.6, CondToken::label(2), u).values;
  CHECK(tangent == doctest::Approx(ngtest::dot(g, v)).epsilon(1e-12));
}

TEST_CASE("init: determinism, zero biases, Xavier bounds, non-zero rater head") {
  const Denoiser net(DenoiserArch{2, 4, 32, 32, {128, 128}});
  const auto a = net.init_params(11), b = net.init_params(11), c = net.init_params(12);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  for (const auto& s : a.layout.slots()) {
    if (s.name.ends_with(".b"))
      for (double v : a.slice(s.name)) CHECK(v == 0.0);
    if (s.name.ends_with(".w")) {
      const double limit = std::sqrt(6.0 / static_cast<double>(s.shape[0] + s.shape[1]));
      for (double v : a.slice(s.name)) CHECK(std::abs(v) <= limit);
    }
  }
  // fan_in = fan_out = 128: uniform(-L, L) with L = sqrt(6/256) has variance L^2/3 = 2/256
  const auto w = a.slice("l1.w");
  double sq = 0.0;
  for (double v : w) sq += v * v;
  const double var = sq / static_cast<double>(w.size());
  const double want = 2.0 / 256.0;
  // the 4th moment of U(-L,L) is L^4/5, so se(var) = sqrt((L^4/5 - (L^2/3)^2)/n)
  const double L2 = 6.0 / 256.0;
  const double se = std::sqrt((L2 * L2 / 5.0 - want * want) / static_cast<double>(w.size()));
  CHECK(std::abs(var - want) <= 4.0 * se);
  // embeddings ~ N(0, 0.02^2)
  const auto e = a.slice("class_emb");
  double esq = 0.0;
  for (double v : e) esq += v * v;
  CHECK(std::sqrt(esq / static_cast<double>(e.size())) == doctest::Approx(0.02).epsilon(0.25));

  const Rater rater(RaterArch{2, 4, 32, 32, {64, 64}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto eta = rater.init_params(seed);
    double n2 = 0.0;
    for (double v : eta.slice("out.w")) n2 += v * v;
    CHECK(n2 > 0.0);
  }
}

TEST_CASE("params: flatten/unflatten round trip and layout json") {
  const Rater rater(RaterArch{2, 4, 8, 4, {6, 5}});
  const auto eta = rater.init_params(3);
  const auto parts = eta.unflatten();
  REQUIRE(parts.size() == eta.layout.slots().size());
  const auto back = ParamVector::flatten(eta.layout, parts);
  CHECK(back.values == eta.values);
  CHECK(Layout::from_json(eta.layout.to_json()) == eta.layout);
  std::size_t total = 0;
  for (const auto& s : eta.layout.slots()) total += s.size();
  CHECK(total == eta.size());
  CHECK_THROWS(ParamVector(eta.layout, std::vector<double>(eta.size() + 1)));
}

TEST_CASE("checkpoints: bit-exact round trip") {
  const Denoiser net(DenoiserArch{2, 4, 8, 4, {16, 16}});
  std::mt19937_64 rng(4);
  const auto theta = randomized(net.init_params(5), rng, 1.0);
  const std::string path = "test_models_ckpt.bin";
  save_checkpoint(path, DenoiserCheckpoint{net.arch(), theta, 123, 77});
  const auto back = load_denoiser(path);
  CHECK(back.arch == net.arch());
  CHECK(back.step == 123);
  CHECK(back.seed == 77);
  CHECK(back.theta.layout == theta.layout);
  CHECK(std::memcmp(back.theta.values.data(), theta.values.data(), theta.size() * sizeof(double)) == 0);

  const Rater rater(RaterArch{2, 4, 8, 4, {8}, true, false, true});
  const auto eta = randomized(rater.init_params(1), rng, 1.0);
  save_checkpoint(path, RaterCheckpoint{rater.arch(), eta, 9, 1});
  const auto rb = load_rater(path);
  CHECK(rb.arch == rater.arch());
  CHECK(rb.eta.values == eta.values);
  CHECK_THROWS_AS(load_denoiser(path), MissingArtifact);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_rater(path), MissingArtifact);
}
