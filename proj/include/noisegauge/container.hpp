// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisegauge/models.hpp"
#include "noisegauge/params.hpp"

namespace noisegauge {

/// On-disk layout shared by checkpoints and datasets: one line of compact JSON
/// terminated by '\n', then header["count"] little-endian IEEE-754 doubles.
struct Container {
  nlohmann::json header;
  std::vector<double> data;
};

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);
void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

/// 64-bit FNV-1a, used for config and artifact hashes.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t v);
std::string file_hash(const std::string& path);

struct DenoiserCheckpoint {
  DenoiserArch arch;
  ParamVector theta;
  long step = 0;
  std::uint64_t seed = 0;
};

struct RaterCheckpoint {
  RaterArch arch;
  ParamVector eta;
  long step = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const DenoiserCheckpoint& ckpt);
void save_checkpoint(const std::string& path, const RaterCheckpoint& ckpt);
DenoiserCheckpoint load_denoiser(const std::string& path);
RaterCheckpoint load_rater(const std::string& path);

}  // namespace noisegauge
