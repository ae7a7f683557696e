// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "noisegauge/container.hpp"
#include "noisegauge/errors.hpp"

namespace noisegauge {
namespace {

using json = nlohmann::json;

struct Field {
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

template <class T>
T read_value(const std::string& key, const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(key + ": expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(key + ": expected an integer");
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
      throw ConfigError(key + ": expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(key + ": expected a number");
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (!v.is_array()) throw ConfigError(key + ": expected an array of integers");
    for (const auto& e : v)
      if (!e.is_number_integer()) throw ConfigError(key + ": expected an array of integers");
  }
  return v.get<T>();
}

template <class T>
Field member(T TrainConfig::*m, const std::string& key) {
  return {[m](const TrainConfig& c) { return json(c.*m); },
          [m, key](TrainConfig& c, const json& v) { c.*m = read_value<T>(key, v); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
#define NG_FIELD(name) t.emplace(#name, member(&TrainConfig::name, #name))
    t.emplace("dataset", Field{[](const TrainConfig& c) { return json(to_string(c.dataset)); },
                               [](TrainConfig& c, const json& v) {
                                 if (!v.is_string()) throw ConfigError("dataset: expected a string");
                                 c.dataset = dataset_kind_from_string(v.get<std::string>());
                               }});
    NG_FIELD(d);
    NG_FIELD(num_classes);
    NG_FIELD(n_data);
    NG_FIELD(T);
    NG_FIELD(beta_start);
    NG_FIELD(beta_end);
    NG_FIELD(p_drop);
    NG_FIELD(t_emb_dim);
    NG_FIELD(c_emb_dim);
    NG_FIELD(denoiser_hidden);
    NG_FIELD(rater_hidden);
    NG_FIELD(rater_use_x0);
    NG_FIELD(rater_use_t);
    NG_FIELD(rater_use_c);
    NG_FIELD(train_batch);
    NG_FIELD(train_lr);
    NG_FIELD(pretrain_steps);
    NG_FIELD(select_steps);
    NG_FIELD(candidate_pool);
    NG_FIELD(group_size);
    NG_FIELD(inner_steps);
    NG_FIELD(meta_steps);
    NG_FIELD(inner_lr);
    NG_FIELD(meta_lr);
    NG_FIELD(inner_batch);
    NG_FIELD(val_batch);
    NG_FIELD(grad_clip);
    NG_FIELD(meta_refresh);
    NG_FIELD(eval_every);
    NG_FIELD(eval_samples);
    NG_FIELD(ddim_steps);
    NG_FIELD(ddim_eta);
    NG_FIELD(cfg_scale);
    NG_FIELD(swd_projections);
    NG_FIELD(stat_images);
    NG_FIELD(stat_noises);
    NG_FIELD(stat_t_points);
    NG_FIELD(sweep_rater_steps);
    NG_FIELD(smooth_window);
    NG_FIELD(stability_window);
    NG_FIELD(data_seed);
    NG_FIELD(init_seed);
    NG_FIELD(train_seed);
    NG_FIELD(eval_seed);
    NG_FIELD(workers);
#undef NG_FIELD
    return t;
  }();
  return table;
}

}  // namespace

nlohmann::json config_to_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& [key, f] : fields()) j[key] = f.get(cfg);
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig cfg;
  const auto& table = fields();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto f = table.find(it.key());
    if (f == table.end()) throw ConfigError("unknown config key: " + it.key());
    f->second.set(cfg, it.value());
  }
  cfg.validate();
  return cfg;
}

TrainConfig apply_overrides(const TrainConfig& cfg, const std::vector<std::string>& overrides) {
  json j = config_to_json(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + o);
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    if (!j.contains(key)) throw ConfigError("unknown config key: " + key);
    json v = json::parse(raw, nullptr, false);
    if (v.is_discarded()) v = raw;
    j[key] = v;
  }
  return config_from_json(j);
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const json j = json::parse(ss.str(), nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
  return config_from_json(j);
}

void save_config(const std::string& path, const TrainConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact("cannot write " + path);
  f << config_to_json(cfg).dump(2) << '\n';
}

std::string config_hash(const TrainConfig& cfg) { return hex64(fnv1a64(config_to_json(cfg).dump())); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, f] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace noisegauge
