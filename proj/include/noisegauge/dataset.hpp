// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisegauge/schedule.hpp"

namespace noisegauge {

enum class DatasetKind { GaussianMixture, Checkerboard, ConditionalMixture };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& s);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::ConditionalMixture;
  int d = 2;
  int num_classes = 4;  // only meaningful for the conditional mixture
  std::size_t n = 20000;
  std::uint64_t seed = 0;

  bool operator==(const DatasetSpec&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

/// Number of classes a model trained on this dataset must support (0 if unlabeled).
int dataset_classes(const DatasetSpec& spec);

/// Mixture component mean; extra dimensions beyond the first two are zero.
std::vector<double> component_mean(const DatasetSpec& spec, int component);
inline constexpr double kMixtureRadius = 2.0;
inline constexpr double kMixtureStd = 0.25;

struct ToyDataset {
  DatasetSpec spec;
  std::vector<double> x;  // n rows of d values
  std::vector<int> labels;  // -1 when unlabeled
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(x).subspan(i * static_cast<std::size_t>(spec.d), static_cast<std::size_t>(spec.d));
  }
  CondToken cond(std::size_t i) const { return labels[i] < 0 ? CondToken::null() : CondToken::label(labels[i]); }
};

/// Deterministic in spec; the validation split is floor(0.1 * n) indices chosen by a seeded permutation.
ToyDataset generate_dataset(const DatasetSpec& spec);

/// Fresh draws from the same distribution, used as the held-out reference for sample quality.
ToyDataset draw_reference(const DatasetSpec& spec, std::size_t n, std::uint64_t seed);

void save_dataset(const std::string& path, const ToyDataset& ds);
ToyDataset load_dataset(const std::string& path);

}  // namespace noisegauge
