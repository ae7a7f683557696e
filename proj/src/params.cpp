// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/params.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "noisegauge/errors.hpp"

namespace noisegauge {

std::size_t ParamSlot::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t Layout::add(std::string name, std::vector<std::size_t> shape) {
  if (std::any_of(slots_.begin(), slots_.end(), [&](const ParamSlot& s) { return s.name == name; }))
    throw ConfigError("duplicate parameter slot: " + name);
  ParamSlot slot{std::move(name), std::move(shape), total_};
  total_ += slot.size();
  slots_.push_back(std::move(slot));
  return slots_.back().offset;
}

const ParamSlot& Layout::slot(const std::string& name) const {
  for (const auto& s : slots_)
    if (s.name == name) return s;
  throw ConfigError("unknown parameter slot: " + name);
}

nlohmann::json Layout::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& s : slots_) arr.push_back({{"name", s.name}, {"shape", s.shape}});
  return arr;
}

Layout Layout::from_json(const nlohmann::json& j) {
  Layout l;
  for (const auto& e : j) l.add(e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>());
  return l;
}

ParamVector::ParamVector(Layout l, std::vector<double> v) : layout(std::move(l)), values(std::move(v)) {
  if (values.size() != layout.total())
    throw ConfigError("parameter count " + std::to_string(values.size()) + " does not match layout total " +
                      std::to_string(layout.total()));
}

std::span<double> ParamVector::slice(const std::string& name) {
  const auto& s = layout.slot(name);
  return std::span<double>(values).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::slice(const std::string& name) const {
  const auto& s = layout.slot(name);
  return std::span<const double>(values).subspan(s.offset, s.size());
}

std::vector<std::vector<double>> ParamVector::unflatten() const {
  std::vector<std::vector<double>> parts;
  for (const auto& s : layout.slots())
    parts.emplace_back(values.begin() + s.offset, values.begin() + s.offset + s.size());
  return parts;
}

ParamVector ParamVector::flatten(Layout l, const std::vector<std::vector<double>>& parts) {
  if (parts.size() != l.slots().size()) throw ConfigError("slot count mismatch in flatten");
  std::vector<double> v;
  v.reserve(l.total());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].size() != l.slots()[i].size()) throw ConfigError("slot size mismatch: " + l.slots()[i].name);
    v.insert(v.end(), parts[i].begin(), parts[i].end());
  }
  return ParamVector(std::move(l), std::move(v));
}

}  // namespace noisegauge
