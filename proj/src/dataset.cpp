// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "noisegauge/container.hpp"
#include "noisegauge/errors.hpp"
#include "noisegauge/rng.hpp"

namespace noisegauge {

namespace {

constexpr int kRingComponents = 8;
constexpr int kCheckerCells = 4;
constexpr double kCheckerHalfWidth = 2.0;

void validate(const DatasetSpec& s) {
  if (s.d < 2) throw ConfigError("toy datasets need d >= 2");
  if (s.n < 10) throw ConfigError("toy datasets need at least 10 samples");
  if (s.kind == DatasetKind::ConditionalMixture && s.num_classes < 1)
    throw ConfigError("conditional mixture needs num_classes >= 1");
}

// Draws one sample; returns its label (-1 for unlabeled kinds).
int draw(const DatasetSpec& s, Rng& rng, std::span<double> out) {
  std::normal_distribution<double> normal(0.0, kMixtureStd);
  switch (s.kind) {
    case DatasetKind::GaussianMixture: {
      const int c = static_cast<int>(uniform_index(rng, kRingComponents));
      const auto mu = component_mean(s, c);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu[i] + normal(rng);
      return -1;
    }
    case DatasetKind::ConditionalMixture: {
      const int c = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(s.num_classes)));
      const auto mu = component_mean(s, c);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = mu[i] + normal(rng);
      return c;
    }
    case DatasetKind::Checkerboard: {
      // Uniform over the "black" cells of a 4x4 board on [-2, 2]^2.
      const double cell = 2.0 * kCheckerHalfWidth / kCheckerCells;
      while (true) {
        const int cx = static_cast<int>(uniform_index(rng, kCheckerCells));
        const int cy = static_cast<int>(uniform_index(rng, kCheckerCells));
        if ((cx + cy) % 2 != 0) continue;
        out[0] = -kCheckerHalfWidth + (cx + uniform01(rng)) * cell;
        out[1] = -kCheckerHalfWidth + (cy + uniform01(rng)) * cell;
        break;
      }
      for (std::size_t i = 2; i < out.size(); ++i) out[i] = normal(rng);
      return -1;
    }
  }
  return -1;
}

ToyDataset draw_rows(const DatasetSpec& spec, std::size_t n, Rng& rng) {
  ToyDataset ds;
  ds.spec = spec;
  ds.x.resize(n * static_cast<std::size_t>(spec.d));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.labels[i] = draw(spec, rng,
                        std::span<double>(ds.x).subspan(i * static_cast<std::size_t>(spec.d),
                                                        static_cast<std::size_t>(spec.d)));
  return ds;
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::GaussianMixture: return "gaussian-mixture";
    case DatasetKind::Checkerboard: return "checkerboard";
    case DatasetKind::ConditionalMixture: return "conditional-mixture";
  }
  return "?";
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "gaussian-mixture") return DatasetKind::GaussianMixture;
  if (s == "checkerboard") return DatasetKind::Checkerboard;
  if (s == "conditional-mixture") return DatasetKind::ConditionalMixture;
  throw ConfigError("unknown dataset kind: " + s);
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = {{"kind", to_string(s.kind)}, {"d", s.d}, {"num_classes", s.num_classes}, {"n", s.n}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  j.at("d").get_to(s.d);
  j.at("num_classes").get_to(s.num_classes);
  j.at("n").get_to(s.n);
  j.at("seed").get_to(s.seed);
}

int dataset_classes(const DatasetSpec& spec) {
  return spec.kind == DatasetKind::ConditionalMixture ? spec.num_classes : 0;
}

std::vector<double> component_mean(const DatasetSpec& spec, int component) {
  const int n = spec.kind == DatasetKind::ConditionalMixture ? spec.num_classes : kRingComponents;
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(component) / static_cast<double>(n);
  std::vector<double> mu(static_cast<std::size_t>(spec.d), 0.0);
  mu[0] = kMixtureRadius * std::cos(angle);
  mu[1] = kMixtureRadius * std::sin(angle);
  return mu;
}

ToyDataset generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  Rng rng = make_rng(spec.seed, 0xDA7A);
  ToyDataset ds = draw_rows(spec, spec.n, rng);

  std::vector<std::size_t> perm(spec.n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_val = spec.n / 10;
  ds.val_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(ds.val_idx.begin(), ds.val_idx.end());
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
  return ds;
}

ToyDataset draw_reference(const DatasetSpec& spec, std::size_t n, std::uint64_t seed) {
  DatasetSpec s = spec;
  s.n = std::max<std::size_t>(n, 10);
  validate(s);
  Rng rng = make_rng(seed, 0x4EF);
  ToyDataset ds = draw_rows(s, n, rng);
  ds.train_idx.resize(n);
  std::iota(ds.train_idx.begin(), ds.train_idx.end(), std::size_t{0});
  return ds;
}

void save_dataset(const std::string& path, const ToyDataset& ds) {
  const std::size_t d = static_cast<std::size_t>(ds.spec.d);
  Container c;
  c.header = {{"kind", "dataset"},
              {"dataset", ds.spec},
              {"rows", ds.size()},
              {"cols", d + 1},
              {"val_indices", ds.val_idx}};
  c.data.reserve(ds.size() * (d + 1));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = ds.row(i);
    c.data.insert(c.data.end(), r.begin(), r.end());
    c.data.push_back(static_cast<double>(ds.labels[i]));
  }
  write_container(path, c);
}

ToyDataset load_dataset(const std::string& path) {
  auto c = read_container(path);
  if (c.header.value("kind", std::string()) != "dataset") throw MissingArtifact(path + " is not a dataset file");
  ToyDataset ds;
  try {
    ds.spec = c.header.at("dataset").get<DatasetSpec>();
    ds.val_idx = c.header.at("val_indices").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw MissingArtifact(path + ": malformed dataset header: " + e.what());
  }
  const std::size_t d = static_cast<std::size_t>(ds.spec.d);
  const std::size_t rows = c.header.value("rows", std::size_t{0});
  if (c.data.size() != rows * (d + 1)) throw MissingArtifact(path + ": dataset payload size mismatch");
  ds.x.reserve(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = c.data.data() + i * (d + 1);
    ds.x.insert(ds.x.end(), r, r + d);
    ds.labels.push_back(static_cast<int>(r[d]));
  }
  std::vector<bool> is_val(rows, false);
  for (auto i : ds.val_idx) {
    if (i >= rows) throw MissingArtifact(path + ": validation index out of range");
    is_val[i] = true;
  }
  for (std::size_t i = 0; i < rows; ++i)
    if (!is_val[i]) ds.train_idx.push_back(i);
  return ds;
}

}  // namespace noisegauge
