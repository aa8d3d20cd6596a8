#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdenet/binio.hpp"
#include "pdenet/errors.hpp"
#include "pdenet/model.hpp"

namespace pdenet {

// PDEC layout, little-endian:
//   "PDEC" | u32 version | u32 entry count |
//   entries: u32 name length, name bytes, u32 rank, u32 extents[rank], f32 payload
// The network configuration travels as rank-1 "meta.*" entries.

inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'E', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_entry(binio::Writer& out, const std::string& name, const Tensor<float>& t) {
  out.u32(static_cast<std::uint32_t>(name.size()));
  out.bytes(name);
  out.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) out.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values()) out.f32(v);
}

inline const std::pair<const char*, std::size_t NetConfig::*> kMetaFields[] = {
    {"meta.bands", &NetConfig::bands},   {"meta.scale", &NetConfig::scale},
    {"meta.stages", &NetConfig::stages}, {"meta.units", &NetConfig::units},
    {"meta.channels", &NetConfig::channels},
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const PdeNet<float>& net) {
  const NetConfig& cfg = net.config();
  const ParamSet<float>& params = net.params();
  binio::Writer out;
  out.bytes(std::string_view(kCheckpointMagic, 4));
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(std::size(detail::kMetaFields) + 1 + params.size()));
  for (const auto& [name, field] : detail::kMetaFields) {
    detail::put_entry(out, name, Tensor<float>({1}, {static_cast<float>(cfg.*field)}));
  }
  detail::put_entry(out, "meta.tau", Tensor<float>({1}, {static_cast<float>(cfg.tau)}));
  for (std::size_t i = 0; i < params.size(); ++i) detail::put_entry(out, params.name(i), params[i]);
  return out.buffer();
}

inline void save_checkpoint(const PdeNet<float>& net, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_checkpoint(net));
}

inline PdeNet<float> decode_checkpoint(std::vector<char> bytes, const std::string& source) {
  binio::Reader in(std::move(bytes), source);
  if (in.remaining() < 4 || in.bytes(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw FormatError(source + ": bad magic (expected \"PDEC\")");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32("entry count");
  ParamSet<float> all;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t len = in.u32("entry name length");
    if (len == 0 || len > 4096) throw FormatError(source + ": implausible entry name length " + std::to_string(len));
    std::string name = in.bytes(len, "entry name");
    const std::uint32_t rank = in.u32(name + " rank");
    if (rank > 8) throw FormatError(source + ": " + name + " has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(in.u32(name + " extent"));
      n *= shape.back();
      if (n > (std::uint64_t{1} << 32)) throw FormatError(source + ": " + name + " dimension overflow");
    }
    if (in.remaining() / 4 < n) throw FormatError(source + ": truncated payload of " + name);
    Tensor<float> t(shape);
    in.f32_array(t.data(), t.size(), name + " payload");
    if (all.contains(name)) throw FormatError(source + ": duplicate entry " + name);
    all.add(std::move(name), std::move(t));
  }
  if (in.remaining() != 0) throw FormatError(source + ": trailing bytes after last entry");

  NetConfig cfg;
  auto meta = [&](const char* name) -> double {
    if (!all.contains(name)) throw FormatError(source + ": missing " + std::string(name));
    const Tensor<float>& t = all[name];
    if (t.size() != 1) throw FormatError(source + ": " + std::string(name) + " must hold one value");
    return t[0];
  };
  for (const auto& [name, field] : detail::kMetaFields) {
    const double v = meta(name);
    if (!(v >= 0) || v != std::floor(v)) throw FormatError(source + ": " + name + " is not a count");
    cfg.*field = static_cast<std::size_t>(v);
  }
  cfg.tau = meta("meta.tau");
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw FormatError(source + ": invalid configuration: " + e.what());
  }
  ParamSet<float> params;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!all.name(i).starts_with("meta.")) params.add(all.name(i), all[i]);
  }
  try {
    return PdeNet<float>(cfg, std::move(params));
  } catch (const FormatError& e) {
    throw FormatError(source + ": " + e.what());
  }
}

inline PdeNet<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path), path.string());
}

}  // namespace pdenet
