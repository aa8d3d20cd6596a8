#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdenet/binio.hpp"
#include "pdenet/errors.hpp"
#include "pdenet/ops.hpp"
#include "pdenet/rng.hpp"
#include "pdenet/tensor.hpp"

namespace pdenet {

/// A band-sequential hyperspectral image, values nominally in [0, 1].
struct HSCube {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  HSCube() = default;
  HSCube(std::size_t b, std::size_t h, std::size_t w, float fill = 0.0f)
      : bands(b), height(h), width(w), values(b * h * w, fill) {}

  std::size_t plane() const noexcept { return height * width; }
  float& at(std::size_t b, std::size_t y, std::size_t x) noexcept { return values[(b * height + y) * width + x]; }
  float at(std::size_t b, std::size_t y, std::size_t x) const noexcept { return values[(b * height + y) * width + x]; }

  friend bool operator==(const HSCube&, const HSCube&) = default;
};

inline constexpr char kCubeMagic[4] = {'H', 'S', 'C', '1'};

/// Per-load diagnostics; values outside [0, 1] are clamped and counted.
struct CubeLoadReport {
  std::size_t clamped = 0;
};

inline HSCube decode_cube(std::vector<char> bytes, const std::string& source, CubeLoadReport* report = nullptr) {
  binio::Reader in(std::move(bytes), source);
  if (in.remaining() < 4 || in.bytes(4, "magic") != std::string(kCubeMagic, 4)) {
    throw FormatError(source + ": bad magic (expected \"HSC1\")");
  }
  const std::uint32_t b = in.u32("header field B");
  const std::uint32_t h = in.u32("header field H");
  const std::uint32_t w = in.u32("header field W");
  if (b == 0) throw FormatError(source + ": header field B is zero");
  if (h == 0) throw FormatError(source + ": header field H is zero");
  if (w == 0) throw FormatError(source + ": header field W is zero");
  // B*H*W must stay below 2^32 floats; checked factor by factor so the product cannot wrap.
  constexpr std::uint64_t kMaxCount = std::numeric_limits<std::uint32_t>::max();
  const std::uint64_t bh = std::uint64_t{b} * h;
  if (bh > kMaxCount || bh * w > kMaxCount) {
    throw FormatError(source + ": dimension overflow in header (B*H*W exceeds 2^32-1 values)");
  }
  const std::uint64_t count = bh * w;
  if (in.remaining() / 4 < count) {
    throw FormatError(source + ": truncated payload (header declares " + std::to_string(b) + "x" + std::to_string(h) +
                      "x" + std::to_string(w) + " = " + std::to_string(count) + " floats, found " +
                      std::to_string(in.remaining() / 4) + ")");
  }
  if (in.remaining() != count * 4) {
    throw FormatError(source + ": payload has " + std::to_string(in.remaining() - count * 4) + " trailing bytes");
  }
  HSCube cube(b, h, w);
  in.f32_array(cube.values.data(), cube.values.size(), "payload");
  std::size_t clamped = 0;
  for (float& v : cube.values) {
    if (std::isnan(v)) {
      v = 0.0f;
      ++clamped;
    } else if (v < 0.0f || v > 1.0f) {
      v = std::clamp(v, 0.0f, 1.0f);
      ++clamped;
    }
  }
  if (report) report->clamped = clamped;
  return cube;
}

inline HSCube read_cube(const std::filesystem::path& path, CubeLoadReport* report = nullptr) {
  return decode_cube(binio::read_file(path), path.string(), report);
}

inline std::vector<char> encode_cube(const HSCube& cube) {
  if (cube.values.size() != cube.bands * cube.height * cube.width) {
    throw DimensionError("cube declares " + std::to_string(cube.bands) + "x" + std::to_string(cube.height) + "x" +
                         std::to_string(cube.width) + " but holds " + std::to_string(cube.values.size()) + " values");
  }
  binio::Writer out;
  out.bytes(std::string_view(kCubeMagic, 4));
  out.u32(static_cast<std::uint32_t>(cube.bands));
  out.u32(static_cast<std::uint32_t>(cube.height));
  out.u32(static_cast<std::uint32_t>(cube.width));
  for (float v : cube.values) out.f32(v);
  return out.buffer();
}

inline void write_cube(const HSCube& cube, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_cube(cube));
}

// ---------------------------------------------------------------------------
// Tensor bridges
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> to_tensor(const HSCube& cube) {
  std::vector<T> v(cube.values.begin(), cube.values.end());
  return Tensor<T>({1, cube.bands, cube.height, cube.width}, std::move(v));
}

/// Stacks cubes of equal extents into one [N, B, H, W] batch.
template <typename T>
Tensor<T> to_batch(const std::vector<const HSCube*>& cubes) {
  if (cubes.empty()) throw DimensionError("to_batch: no cubes");
  const HSCube& f = *cubes.front();
  Tensor<T> out({cubes.size(), f.bands, f.height, f.width});
  std::size_t off = 0;
  for (const HSCube* c : cubes) {
    if (c->bands != f.bands || c->height != f.height || c->width != f.width) {
      throw DimensionError("to_batch: cubes differ in extents");
    }
    std::copy(c->values.begin(), c->values.end(), out.data() + off);
    off += c->values.size();
  }
  return out;
}

/// Extracts batch item `n` of an [N, B, H, W] tensor, optionally clamped to [0, 1].
template <typename T>
HSCube to_cube(const Tensor<T>& t, std::size_t n = 0, bool clamp01 = false) {
  const Dims4 d = Dims4::of(t.shape(), "to_cube input");
  if (n >= d.n) throw DimensionError("to_cube: batch index out of range");
  HSCube cube(d.c, d.h, d.w);
  const T* src = t.data() + n * d.c * d.plane();
  for (std::size_t i = 0; i < cube.values.size(); ++i) {
    const float v = static_cast<float>(src[i]);
    cube.values[i] = clamp01 ? std::clamp(v, 0.0f, 1.0f) : v;
  }
  return cube;
}

// ---------------------------------------------------------------------------
// Patching and augmentation
// ---------------------------------------------------------------------------

/// Window origins along one axis; the last window is moved flush with the far edge.
inline std::vector<std::size_t> window_offsets(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (stride == 0) throw ParameterError("patch stride must be at least 1");
  if (patch == 0 || patch > extent) {
    throw ParameterError("patch size " + std::to_string(patch) + " does not fit extent " + std::to_string(extent));
  }
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= extent; o += stride) out.push_back(o);
  if (out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

inline HSCube crop(const HSCube& cube, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > cube.height || x0 + w > cube.width) throw DimensionError("crop window exceeds cube extents");
  HSCube out(cube.bands, h, w);
  for (std::size_t b = 0; b < cube.bands; ++b)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(&cube.values[(b * cube.height + y0 + y) * cube.width + x0], w, &out.values[(b * h + y) * w]);
  return out;
}

/// Row-major sliding windows over the cube, keeping every band.
inline std::vector<HSCube> extract_patches(const HSCube& cube, std::size_t patch, std::size_t stride) {
  if (patch > cube.height || patch > cube.width) {
    throw ParameterError("patch " + std::to_string(patch) + " exceeds cube extent " + std::to_string(cube.height) +
                         "x" + std::to_string(cube.width));
  }
  const auto ys = window_offsets(cube.height, patch, stride);
  const auto xs = window_offsets(cube.width, patch, stride);
  std::vector<HSCube> out;
  out.reserve(ys.size() * xs.size());
  for (std::size_t y : ys)
    for (std::size_t x : xs) out.push_back(crop(cube, y, x, patch, patch));
  return out;
}

/// Dihedral transform: codes 0-3 rotate clockwise by code*90 degrees, codes
/// 4-7 flip horizontally first and then rotate by (code-4)*90 degrees.
inline HSCube augment(const HSCube& in, int code) {
  if (code < 0 || code > 7) throw ParameterError("augmentation code must be in 0..7, got " + std::to_string(code));
  const bool flip = code >= 4;
  const int turns = code % 4;
  const bool swap = turns % 2 == 1;
  const std::size_t H = in.height, W = in.width;
  HSCube out(in.bands, swap ? W : H, swap ? H : W);
  for (std::size_t b = 0; b < in.bands; ++b) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        // source pixel in the (possibly flipped) input
        std::size_t sy = 0, sx = 0;
        switch (turns) {
          case 0: sy = y; sx = x; break;
          case 1: sy = H - 1 - x; sx = y; break;
          case 2: sy = H - 1 - y; sx = W - 1 - x; break;
          default: sy = x; sx = W - 1 - y; break;
        }
        if (flip) sx = W - 1 - sx;
        out.at(b, y, x) = in.at(b, sy, sx);
      }
    }
  }
  return out;
}

inline int inverse_augment_code(int code) {
  if (code < 0 || code > 7) throw ParameterError("augmentation code must be in 0..7, got " + std::to_string(code));
  return code < 4 ? (4 - code) % 4 : code;
}

// ---------------------------------------------------------------------------
// LR synthesis
// ---------------------------------------------------------------------------

/// Bicubic down-sampling by `alpha`, then optional N(0, sigma^2) noise and a clamp to [0, 1].
inline HSCube make_lr(const HSCube& hr, std::size_t alpha, double noise_sigma, Rng& rng) {
  if (alpha != 2 && alpha != 4 && alpha != 8) {
    throw ParameterError("scale factor must be 2, 4 or 8, got " + std::to_string(alpha));
  }
  if (hr.height % alpha != 0 || hr.width % alpha != 0) {
    throw ParameterError("cube extents " + std::to_string(hr.height) + "x" + std::to_string(hr.width) +
                         " not divisible by scale " + std::to_string(alpha));
  }
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
  Tensor<float> lr = bicubic_resize(to_tensor<float>(hr), hr.height / alpha, hr.width / alpha);
  HSCube out = to_cube(lr);
  if (noise_sigma > 0.0) {
    for (float& v : out.values) v = static_cast<float>(v + noise_sigma * rng.normal());
  }
  for (float& v : out.values) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline HSCube make_lr(const HSCube& hr, std::size_t alpha) {
  Rng unused(0);
  return make_lr(hr, alpha, 0.0, unused);
}

/// Bicubic up-sampling of an LR cube by `alpha` (the interpolation baseline).
inline HSCube upsample_bicubic(const HSCube& lr, std::size_t alpha) {
  return to_cube(bicubic_resize(to_tensor<float>(lr), lr.height * alpha, lr.width * alpha));
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

enum class Role { train, test };

inline const char* role_name(Role r) { return r == Role::train ? "train" : "test"; }

/// One dataset entry: an HR cube and, after preparation, its LR counterpart.
struct ManifestEntry {
  Role role = Role::train;
  std::filesystem::path hr;
  std::optional<std::filesystem::path> lr;
};

/// Parses `<role> <hr-path> [<lr-path>]` lines with `#` comments. Relative
/// paths are resolved against `base_dir`.
inline std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                                                 const std::string& source = "manifest") {
  std::vector<ManifestEntry> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string role, hr, lr, extra;
    if (!(fields >> role)) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (!(fields >> hr)) throw ConfigError(where + ": missing cube path");
    fields >> lr;
    if (fields >> extra) throw ConfigError(where + ": too many fields");
    ManifestEntry e;
    if (role == "train") e.role = Role::train;
    else if (role == "test") e.role = Role::test;
    else throw ConfigError(where + ": unknown role '" + role + "' (expected train or test)");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() ? path : base_dir / path;
    };
    e.hr = resolve(hr);
    if (!lr.empty()) e.lr = resolve(lr);
    out.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      if (out[i].hr == out[j].hr) throw ConfigError(source + ": duplicate entry " + out[i].hr.string());
  return out;
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path(), path.string());
}

/// Serialises entries with paths written relative to `base_dir` when possible.
inline std::string format_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& base_dir) {
  auto rel = [&](const std::filesystem::path& p) {
    std::filesystem::path r = p.lexically_relative(base_dir);
    return (r.empty() ? p : r).generic_string();
  };
  std::ostringstream os;
  os << "# role hr-cube [lr-cube]\n";
  for (const auto& e : entries) {
    os << role_name(e.role) << ' ' << rel(e.hr);
    if (e.lr) os << ' ' << rel(*e.lr);
    os << '\n';
  }
  return os.str();
}

}  // namespace pdenet
