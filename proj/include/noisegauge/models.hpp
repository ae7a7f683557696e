// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "noisegauge/params.hpp"
#include "noisegauge/schedule.hpp"

namespace noisegauge {

/// Sinusoidal embedding of a normalized timestep. Entry 2i is sin(w_i * s * t),
/// entry 2i+1 is cos(w_i * s * t), with w_i = base^(-i / (dim/2)) and s = kTimeScale.
inline constexpr double kTimeScale = 1000.0;
inline constexpr double kFrequencyBase = 10000.0;
std::vector<double> time_embedding(double t_norm, int dim);

/// Forward trace kept for the backward pass.
template <class T>
struct Activations {
  std::vector<T> input;
  std::vector<std::vector<T>> pre;
  std::vector<std::vector<T>> post;
  int class_row = -1;
};

/// MLP over [data, time embedding, class embedding] with SiLU hidden layers and a
/// linear head. The class embedding table is a learned slot of the parameter vector.
class ConditionedMlp {
 public:
  struct Spec {
    int data_dim = 2;
    bool use_t = true;
    int t_emb_dim = 32;
    bool use_c = true;
    int c_emb_dim = 32;
    int class_rows = 1;
    std::vector<int> hidden = {128, 128};
    int out_dim = 2;
  };

  explicit ConditionedMlp(Spec spec);

  const Spec& spec() const { return spec_; }
  const Layout& layout() const { return layout_; }
  int input_dim() const;

  /// data_a and data_b are concatenated (data_b may be empty) to form the data block.
  template <class T>
  void forward(std::span<const T> params, std::span<const double> data_a, std::span<const double> data_b,
               double t_norm, CondToken cond, std::span<T> out, Activations<T>& act) const;

  /// Accumulates d<upstream, out>/d(params) into grad.
  template <class T>
  void backward(std::span<const T> params, const Activations<T>& act, std::span<const T> upstream,
                std::span<T> grad) const;

 private:
  struct Dense {
    std::size_t w, b, in, out;
  };

  Spec spec_;
  Layout layout_;
  std::size_t emb_offset_ = 0;
  std::vector<Dense> dense_;
};

struct DenoiserArch {
  int d = 2;
  int num_classes = 0;
  int t_emb_dim = 32;
  int c_emb_dim = 32;
  std::vector<int> hidden = {128, 128};

  bool operator==(const DenoiserArch&) const = default;
};

struct RaterArch {
  int d = 2;
  int num_classes = 0;
  int t_emb_dim = 32;
  int c_emb_dim = 32;
  std::vector<int> hidden = {64, 64};
  // Input ablations; the noise itself is always an input.
  bool use_x0 = true;
  bool use_t = true;
  bool use_c = true;

  bool operator==(const RaterArch&) const = default;
};

void to_json(nlohmann::json& j, const DenoiserArch& a);
void from_json(const nlohmann::json& j, DenoiserArch& a);
void to_json(nlohmann::json& j, const RaterArch& a);
void from_json(const nlohmann::json& j, RaterArch& a);

/// Noise predictor eps_theta(x_t, t, c).
class Denoiser {
 public:
  explicit Denoiser(DenoiserArch arch);

  const DenoiserArch& arch() const { return arch_; }
  const Layout& layout() const { return net_.layout(); }
  const ConditionedMlp& net() const { return net_; }

  template <class T>
  void predict(std::span<const T> theta, std::span<const double> x_t, double t_norm, CondToken cond,
               std::span<T> out, Activations<T>& act) const {
    net_.forward<T>(theta, x_t, {}, t_norm, cond, out, act);
  }

  std::vector<double> predict(const ParamVector& theta, std::span<const double> x_t, double t_norm,
                              CondToken cond) const;

  /// Gradient of <upstream, eps_theta(x_t, t, c)> with respect to theta.
  ParamVector grad_params(const ParamVector& theta, std::span<const double> x_t, double t_norm, CondToken cond,
                          std::span<const double> upstream) const;

  /// Xavier-uniform weights, zero biases, N(0, 0.02^2) class embeddings.
  ParamVector init_params(std::uint64_t seed) const;

  void check(const ParamVector& theta) const;

 private:
  DenoiserArch arch_;
  ConditionedMlp net_;
};

/// Noise rater phi_eta(eps, t, x0, c) producing one scalar score per noise instance.
class Rater {
 public:
  explicit Rater(RaterArch arch);

  const RaterArch& arch() const { return arch_; }
  const Layout& layout() const { return net_.layout(); }
  const ConditionedMlp& net() const { return net_; }

  template <class T>
  T score(std::span<const T> eta, std::span<const double> eps, double t_norm, std::span<const double> x0,
          CondToken cond, Activations<T>& act) const;

  double score(const ParamVector& eta, std::span<const double> eps, double t_norm, std::span<const double> x0,
               CondToken cond) const;

  /// Gradient of upstream * phi_eta(...) with respect to eta.
  ParamVector grad_params(const ParamVector& eta, std::span<const double> eps, double t_norm,
                          std::span<const double> x0, CondToken cond, double upstream) const;

  /// Same init rule as the denoiser; the scalar head is Xavier, never zero.
  ParamVector init_params(std::uint64_t seed) const;

  void check(const ParamVector& eta) const;

 private:
  RaterArch arch_;
  ConditionedMlp net_;
};

}  // namespace noisegauge
