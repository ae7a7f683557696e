// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace noisegauge {

struct ParamSlot {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;

  std::size_t size() const;
  bool operator==(const ParamSlot&) const = default;
};

/// Ordered mapping from named tensors to contiguous slices of a flat array.
class Layout {
 public:
  /// Appends a slot and returns its offset.
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  const ParamSlot& slot(const std::string& name) const;
  const std::vector<ParamSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }

  nlohmann::json to_json() const;
  static Layout from_json(const nlohmann::json& j);

  bool operator==(const Layout&) const = default;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t total_ = 0;
};

/// Flat parameter store for a network (denoiser theta or rater eta).
struct ParamVector {
  Layout layout;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(Layout l) : layout(std::move(l)), values(layout.total(), 0.0) {}
  ParamVector(Layout l, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::span<double> slice(const std::string& name);
  std::span<const double> slice(const std::string& name) const;

  /// Per-slot copies, in layout order.
  std::vector<std::vector<double>> unflatten() const;
  static ParamVector flatten(Layout l, const std::vector<std::vector<double>>& parts);
};

}  // namespace noisegauge
