// SPDX-License-Identifier: Apache-2.0
#include "noisegauge/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "noisegauge/errors.hpp"

namespace noisegauge {

static_assert(std::endian::native == std::endian::little, "container codec assumes a little-endian host");

std::string encode_container(const Container& c) {
  nlohmann::json header = c.header;
  header["count"] = c.data.size();
  std::string out = header.dump();
  out.push_back('\n');
  const std::size_t off = out.size();
  out.resize(off + c.data.size() * sizeof(double));
  if (!c.data.empty()) std::memcpy(out.data() + off, c.data.data(), c.data.size() * sizeof(double));
  return out;
}

Container decode_container(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw MissingArtifact("container has no header line");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw MissingArtifact(std::string("container header is not valid JSON: ") + e.what());
  }
  const auto count = c.header.value("count", std::size_t{0});
  if (bytes.size() - nl - 1 != count * sizeof(double))
    throw MissingArtifact("container payload size does not match header count");
  c.data.resize(count);
  if (count) std::memcpy(c.data.data(), bytes.data() + nl + 1, count * sizeof(double));
  return c;
}

void write_container(const std::string& path, const Container& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MissingArtifact("cannot write " + path);
  const auto bytes = encode_container(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifact("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_container(ss.str());
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifact("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

namespace {

template <class Arch>
Container pack(const char* kind, const Arch& arch, const ParamVector& p, long step, std::uint64_t seed) {
  Container c;
  c.header = {{"kind", kind}, {"arch", arch}, {"layout", p.layout.to_json()}, {"step", step}, {"seed", seed}};
  c.data = p.values;
  return c;
}

template <class Arch>
ParamVector unpack(const std::string& path, const char* kind, Arch& arch, long& step, std::uint64_t& seed) {
  auto c = read_container(path);
  if (c.header.value("kind", std::string()) != kind)
    throw MissingArtifact(path + " is not a " + kind + " checkpoint");
  try {
    arch = c.header.at("arch").get<Arch>();
    step = c.header.at("step").get<long>();
    seed = c.header.at("seed").get<std::uint64_t>();
    return ParamVector(Layout::from_json(c.header.at("layout")), std::move(c.data));
  } catch (const nlohmann::json::exception& e) {
    throw MissingArtifact(path + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserCheckpoint& ckpt) {
  write_container(path, pack("denoiser", ckpt.arch, ckpt.theta, ckpt.step, ckpt.seed));
}

void save_checkpoint(const std::string& path, const RaterCheckpoint& ckpt) {
  write_container(path, pack("rater", ckpt.arch, ckpt.eta, ckpt.step, ckpt.seed));
}

}  // namespace noisegauge

namespace noisegauge {

DenoiserCheckpoint load_denoiser(const std::string& path) {
  DenoiserCheckpoint ck;
  ck.theta = unpack(path, "denoiser", ck.arch, ck.step, ck.seed);
  Denoiser(ck.arch).check(ck.theta);
  return ck;
}

RaterCheckpoint load_rater(const std::string& path) {
  RaterCheckpoint ck;
  ck.eta = unpack(path, "rater", ck.arch, ck.step, ck.seed);
  Rater(ck.arch).check(ck.eta);
  return ck;
}

}  // namespace noisegauge
