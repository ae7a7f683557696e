// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/models.hpp"

#include <cmath>
#include <string>

#include "noisegauge/dual.hpp"
#include "noisegauge/errors.hpp"
#include "noisegauge/rng.hpp"

namespace noisegauge {

std::vector<double> time_embedding(double t_norm, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("time embedding dimension must be positive and even");
  const int half = dim / 2;
  std::vector<double> emb(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(kFrequencyBase) * static_cast<double>(i) / static_cast<double>(half));
    const double angle = kTimeScale * t_norm * freq;
    emb[static_cast<std::size_t>(2 * i)] = std::sin(angle);
    emb[static_cast<std::size_t>(2 * i + 1)] = std::cos(angle);
  }
  return emb;
}

namespace {

template <class T>
T silu(const T& x) {
  return x * sigmoid(x);
}

// d/dx silu(x) = s(x) * (1 + x * (1 - s(x)))
template <class T>
T silu_grad(const T& x) {
  const T s = sigmoid(x);
  return s * (T(1.0) + x * (T(1.0) - s));
}

}  // namespace

ConditionedMlp::ConditionedMlp(Spec spec) : spec_(std::move(spec)) {
  if (spec_.data_dim < 1 || spec_.out_dim < 1) throw ConfigError("network dimensions must be positive");
  if (spec_.use_t && (spec_.t_emb_dim <= 0 || spec_.t_emb_dim % 2 != 0))
    throw ConfigError("t_emb_dim must be positive and even");
  if (spec_.use_c && (spec_.c_emb_dim <= 0 || spec_.class_rows < 1))
    throw ConfigError("class embedding needs c_emb_dim > 0 and at least the null row");
  for (int h : spec_.hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");

  if (spec_.use_c)
    emb_offset_ = layout_.add("class_emb", {static_cast<std::size_t>(spec_.class_rows),
                                            static_cast<std::size_t>(spec_.c_emb_dim)});
  std::size_t in = static_cast<std::size_t>(input_dim());
  std::vector<std::size_t> widths(spec_.hidden.begin(), spec_.hidden.end());
  widths.push_back(static_cast<std::size_t>(spec_.out_dim));
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string name = l + 1 == widths.size() ? "out" : "l" + std::to_string(l);
    Dense dense;
    dense.in = in;
    dense.out = widths[l];
    dense.w = layout_.add(name + ".w", {dense.out, dense.in});
    dense.b = layout_.add(name + ".b", {dense.out});
    dense_.push_back(dense);
    in = dense.out;
  }
}

int ConditionedMlp::input_dim() const {
  return spec_.data_dim + (spec_.use_t ? spec_.t_emb_dim : 0) + (spec_.use_c ? spec_.c_emb_dim : 0);
}

template <class T>
void ConditionedMlp::forward(std::span<const T> params, std::span<const double> data_a,
                             std::span<const double> data_b, double t_norm, CondToken cond, std::span<T> out,
                             Activations<T>& act) const {
  if (params.size() != layout_.total()) throw ConfigError("parameter vector does not match network layout");
  if (data_a.size() + data_b.size() != static_cast<std::size_t>(spec_.data_dim))
    throw ConfigError("network input dimension mismatch");
  if (out.size() != static_cast<std::size_t>(spec_.out_dim)) throw ConfigError("network output dimension mismatch");

  act.input.resize(static_cast<std::size_t>(input_dim()));
  std::size_t k = 0;
  for (double v : data_a) act.input[k++] = T(v);
  for (double v : data_b) act.input[k++] = T(v);
  if (spec_.use_t)
    for (double v : time_embedding(t_norm, spec_.t_emb_dim)) act.input[k++] = T(v);
  act.class_row = -1;
  if (spec_.use_c) {
    const int num_classes = spec_.class_rows - 1;
    if (!cond.is_null() && (cond.value() < 0 || cond.value() >= num_classes))
      throw ConfigError("class index outside embedding table");
    const int row = cond.row(num_classes);
    act.class_row = row;
    const std::size_t base = emb_offset_ + static_cast<std::size_t>(row * spec_.c_emb_dim);
    for (int i = 0; i < spec_.c_emb_dim; ++i) act.input[k++] = params[base + static_cast<std::size_t>(i)];
  }

  const std::size_t n_hidden = dense_.size() - 1;
  act.pre.resize(n_hidden);
  act.post.resize(n_hidden);
  const std::vector<T>* x = &act.input;
  for (std::size_t l = 0; l < dense_.size(); ++l) {
    const Dense& L = dense_[l];
    const bool last = l == n_hidden;
    std::vector<T> tmp;
    std::vector<T>& y = last ? tmp : act.pre[l];
    y.resize(L.out);
    const T* xin = x->data();
    for (std::size_t j = 0; j < L.out; ++j) {
      const T* row = params.data() + L.w + j * L.in;
      // Four independent partial sums; fixed order keeps results deterministic.
      T a0(0.0), a1(0.0), a2(0.0), a3(0.0);
      std::size_t i = 0;
      for (; i + 4 <= L.in; i += 4) {
        a0 += row[i] * xin[i];
        a1 += row[i + 1] * xin[i + 1];
        a2 += row[i + 2] * xin[i + 2];
        a3 += row[i + 3] * xin[i + 3];
      }
      for (; i < L.in; ++i) a0 += row[i] * xin[i];
      y[j] = params[L.b + j] + ((a0 + a1) + (a2 + a3));
    }
    if (last) {
      for (std::size_t j = 0; j < L.out; ++j) out[j] = y[j];
    } else {
      auto& post = act.post[l];
      post.resize(L.out);
      for (std::size_t j = 0; j < L.out; ++j) post[j] = silu(y[j]);
      x = &post;
    }
  }
}

template <class T>
void ConditionedMlp::backward(std::span<const T> params, const Activations<T>& act, std::span<const T> upstream,
                              std::span<T> grad) const {
  if (grad.size() != layout_.total()) throw ConfigError("gradient buffer does not match network layout");
  std::vector<T> delta(upstream.begin(), upstream.end());
  std::vector<T> below;
  for (std::size_t l = dense_.size(); l-- > 0;) {
    const Dense& L = dense_[l];
    const std::vector<T>& x = l == 0 ? act.input : act.post[l - 1];
    below.assign(L.in, T(0.0));
    for (std::size_t j = 0; j < L.out; ++j) {
      const T dj = delta[j];
      grad[L.b + j] += dj;
      T* gw = grad.data() + L.w + j * L.in;
      const T* w = params.data() + L.w + j * L.in;
      for (std::size_t i = 0; i < L.in; ++i) {
        gw[i] += dj * x[i];
        below[i] += w[i] * dj;
      }
    }
    if (l > 0) {
      const auto& pre = act.pre[l - 1];
      for (std::size_t i = 0; i < L.in; ++i) below[i] *= silu_grad(pre[i]);
    }
    delta.swap(below);
  }
  // delta now holds d/d(input); only the class embedding slice is a parameter.
  if (act.class_row >= 0) {
    const std::size_t in_off = static_cast<std::size_t>(input_dim() - spec_.c_emb_dim);
    const std::size_t base = emb_offset_ + static_cast<std::size_t>(act.class_row * spec_.c_emb_dim);
    for (int i = 0; i < spec_.c_emb_dim; ++i)
      grad[base + static_cast<std::size_t>(i)] += delta[in_off + static_cast<std::size_t>(i)];
  }
}

template void ConditionedMlp::forward<double>(std::span<const double>, std::span<const double>,
                                              std::span<const double>, double, CondToken, std::span<double>,
                                              Activations<double>&) const;
template void ConditionedMlp::forward<Dual>(std::span<const Dual>, std::span<const double>, std::span<const double>,
                                            double, CondToken, std::span<Dual>, Activations<Dual>&) const;
template void ConditionedMlp::backward<double>(std::span<const double>, const Activations<double>&,
                                               std::span<const double>, std::span<double>) const;
template void ConditionedMlp::backward<Dual>(std::span<const Dual>, const Activations<Dual>&, std::span<const Dual>,
                                             std::span<Dual>) const;

namespace {

void init_layout(const Layout& layout, std::span<double> values, std::uint64_t seed, std::uint64_t stream) {
  Rng rng = make_rng(seed, stream);
  for (const auto& s : layout.slots()) {
    auto v = values.subspan(s.offset, s.size());
    if (s.name == "class_emb") {
      std::normal_distribution<double> normal(0.0, 0.02);
      for (double& x : v) x = normal(rng);
    } else if (s.shape.size() == 2) {
      const double fan_out = static_cast<double>(s.shape[0]);
      const double fan_in = static_cast<double>(s.shape[1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> uni(-limit, limit);
      for (double& x : v) x = uni(rng);
    } else {
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
}

ConditionedMlp::Spec denoiser_spec(const DenoiserArch& a) {
  if (a.d < 1 || a.num_classes < 0) throw ConfigError("denoiser needs d >= 1 and num_classes >= 0");
  ConditionedMlp::Spec s;
  s.data_dim = a.d;
  s.t_emb_dim = a.t_emb_dim;
  s.c_emb_dim = a.c_emb_dim;
  s.class_rows = a.num_classes + 1;
  s.hidden = a.hidden;
  s.out_dim = a.d;
  return s;
}

ConditionedMlp::Spec rater_spec(const RaterArch& a) {
  if (a.d < 1 || a.num_classes < 0) throw ConfigError("rater needs d >= 1 and num_classes >= 0");
  ConditionedMlp::Spec s;
  s.data_dim = a.use_x0 ? 2 * a.d : a.d;
  s.use_t = a.use_t;
  s.t_emb_dim = a.t_emb_dim;
  s.use_c = a.use_c;
  s.c_emb_dim = a.c_emb_dim;
  s.class_rows = a.num_classes + 1;
  s.hidden = a.hidden;
  s.out_dim = 1;
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const DenoiserArch& a) {
  j = {{"d", a.d}, {"num_classes", a.num_classes}, {"t_emb_dim", a.t_emb_dim}, {"c_emb_dim", a.c_emb_dim},
       {"hidden", a.hidden}};
}

void from_json(const nlohmann::json& j, DenoiserArch& a) {
  j.at("d").get_to(a.d);
  j.at("num_classes").get_to(a.num_classes);
  j.at("t_emb_dim").get_to(a.t_emb_dim);
  j.at("c_emb_dim").get_to(a.c_emb_dim);
  j.at("hidden").get_to(a.hidden);
}

void to_json(nlohmann::json& j, const RaterArch& a) {
  j = {{"d", a.d},           {"num_classes", a.num_classes}, {"t_emb_dim", a.t_emb_dim},
       {"c_emb_dim", a.c_emb_dim}, {"hidden", a.hidden},      {"use_x0", a.use_x0},
       {"use_t", a.use_t},   {"use_c", a.use_c}};
}

void from_json(const nlohmann::json& j, RaterArch& a) {
  j.at("d").get_to(a.d);
  j.at("num_classes").get_to(a.num_classes);
  j.at("t_emb_dim").get_to(a.t_emb_dim);
  j.at("c_emb_dim").get_to(a.c_emb_dim);
  j.at("hidden").get_to(a.hidden);
  j.at("use_x0").get_to(a.use_x0);
  j.at("use_t").get_to(a.use_t);
  j.at("use_c").get_to(a.use_c);
}

Denoiser::Denoiser(DenoiserArch arch) : arch_(std::move(arch)), net_(denoiser_spec(arch_)) {}

void Denoiser::check(const ParamVector& theta) const {
  if (!(theta.layout == net_.layout())) throw ConfigError("denoiser parameters do not match the architecture layout");
}

std::vector<double> Denoiser::predict(const ParamVector& theta, std::span<const double> x_t, double t_norm,
                                      CondToken cond) const {
  check(theta);
  std::vector<double> out(static_cast<std::size_t>(arch_.d));
  Activations<double> act;
  predict<double>(theta.values, x_t, t_norm, cond, out, act);
  return out;
}

ParamVector Denoiser::grad_params(const ParamVector& theta, std::span<const double> x_t, double t_norm,
                                  CondToken cond, std::span<const double> upstream) const {
  check(theta);
  std::vector<double> out(static_cast<std::size_t>(arch_.d));
  Activations<double> act;
  predict<double>(theta.values, x_t, t_norm, cond, out, act);
  ParamVector g(theta.layout);
  net_.backward<double>(theta.values, act, upstream, g.values);
  return g;
}

ParamVector Denoiser::init_params(std::uint64_t seed) const {
  ParamVector p(net_.layout());
  init_layout(p.layout, p.values, seed, 0xD3);
  return p;
}

Rater::Rater(RaterArch arch) : arch_(std::move(arch)), net_(rater_spec(arch_)) {}

void Rater::check(const ParamVector& eta) const {
  if (!(eta.layout == net_.layout())) throw ConfigError("rater parameters do not match the architecture layout");
}

template <class T>
T Rater::score(std::span<const T> eta, std::span<const double> eps, double t_norm, std::span<const double> x0,
               CondToken cond, Activations<T>& act) const {
  T out[1];
  net_.forward<T>(eta, eps, arch_.use_x0 ? x0 : std::span<const double>{}, t_norm, cond, std::span<T>(out, 1), act);
  return out[0];
}

template double Rater::score<double>(std::span<const double>, std::span<const double>, double,
                                     std::span<const double>, CondToken, Activations<double>&) const;
template Dual Rater::score<Dual>(std::span<const Dual>, std::span<const double>, double, std::span<const double>,
                                 CondToken, Activations<Dual>&) const;

double Rater::score(const ParamVector& eta, std::span<const double> eps, double t_norm, std::span<const double> x0,
                    CondToken cond) const {
  check(eta);
  Activations<double> act;
  return score<double>(eta.values, eps, t_norm, x0, cond, act);
}

ParamVector Rater::grad_params(const ParamVector& eta, std::span<const double> eps, double t_norm,
                               std::span<const double> x0, CondToken cond, double upstream) const {
  check(eta);
  Activations<double> act;
  score<double>(eta.values, eps, t_norm, x0, cond, act);
  ParamVector g(eta.layout);
  const double up[1] = {upstream};
  net_.backward<double>(eta.values, act, std::span<const double>(up, 1), g.values);
  return g;
}

ParamVector Rater::init_params(std::uint64_t seed) const {
  ParamVector p(net_.layout());
  init_layout(p.layout, p.values, seed, 0x7A);
  return p;
}

}  // namespace noisegauge
