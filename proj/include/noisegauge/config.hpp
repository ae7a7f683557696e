// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "noisegauge/pipelines.hpp"

namespace noisegauge {

/// Flat object with one key per TrainConfig field. Keys serialize sorted, so the dump is canonical.
nlohmann::json config_to_json(const TrainConfig& cfg);

/// Starts from the defaults and applies every key of j. Unknown keys and mistyped values throw ConfigError.
/// The result is validated.
TrainConfig config_from_json(const nlohmann::json& j);

/// Applies "key=value" overrides in order. The value is read as JSON when it parses, else as a string.
TrainConfig apply_overrides(const TrainConfig& cfg, const std::vector<std::string>& overrides);

TrainConfig load_config(const std::string& path);
void save_config(const std::string& path, const TrainConfig& cfg);

/// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

/// Every config key, in canonical order.
std::vector<std::string> config_keys();

}  // namespace noisegauge
