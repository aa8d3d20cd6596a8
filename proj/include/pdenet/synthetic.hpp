#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pdenet/hsdata.hpp"
#include "pdenet/rng.hpp"

namespace pdenet {

struct SyntheticOptions {
  std::size_t bands = 31;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t materials = 6;  // distinct spectra per scene
  std::size_t shapes = 12;    // occluding regions per scene
};

namespace detail {

// Smooth positive spectrum: baseline plus a few Gaussian bumps, scaled into [0.05, 0.95].
inline std::vector<double> smooth_spectrum(std::size_t bands, Rng& rng) {
  std::vector<double> s(bands, rng.uniform(0.1, 0.4));
  const std::size_t bumps = 1 + rng.below(3);
  for (std::size_t k = 0; k < bumps; ++k) {
    const double centre = rng.uniform(0.0, static_cast<double>(bands - 1));
    const double width = rng.uniform(0.08, 0.35) * static_cast<double>(bands);
    const double height = rng.uniform(-0.3, 0.8);
    for (std::size_t b = 0; b < bands; ++b) {
      const double d = (static_cast<double>(b) - centre) / width;
      s[b] += height * std::exp(-0.5 * d * d);
    }
  }
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  const double top = rng.uniform(0.5, 0.95), bottom = rng.uniform(0.05, 0.3);
  const double span = *hi - *lo;
  for (double& v : s) v = span > 0 ? bottom + (v - *lo) / span * (top - bottom) : 0.5 * (top + bottom);
  return s;
}

}  // namespace detail

/// A random scene: smooth spectra painted as occluding ellipses ("dead leaves")
/// with anti-aliased edges over a shaded background.
inline HSCube synthetic_cube(const SyntheticOptions& opt, Rng& rng) {
  const std::size_t B = opt.bands, H = opt.height, W = opt.width, M = std::max<std::size_t>(opt.materials, 2);
  std::vector<std::vector<double>> spectra;
  for (std::size_t m = 0; m < M; ++m) spectra.push_back(detail::smooth_spectrum(B, rng));

  // per-pixel material weights; later shapes occlude earlier ones
  std::vector<double> ab(M * H * W, 0.0);
  std::vector<double> shade(H * W);
  const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double u = (x + 0.5) / W - 0.5, v = (y + 0.5) / H - 0.5;
      shade[y * W + x] = 1.0 + gx * u + gy * v;
      ab[y * W + x] = 1.0;
    }
  const double extent = static_cast<double>(std::min(H, W));
  for (std::size_t s = 0; s < opt.shapes; ++s) {
    const std::size_t m = 1 + rng.below(M - 1);
    const double cx = rng.uniform(0, W), cy = rng.uniform(0, H);
    const double rx = rng.uniform(0.05, 0.3) * extent, ry = rng.uniform(0.05, 0.3) * extent;
    const double angle = rng.uniform(0, 3.14159265358979), ca = std::cos(angle), sa = std::sin(angle);
    const double edge = rng.uniform(0.3, 1.2);  // transition width in pixels
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double px = (ca * dx + sa * dy) / rx, py = (-sa * dx + ca * dy) / ry;
        const double dist = (std::sqrt(px * px + py * py) - 1.0) * std::min(rx, ry);  // ~pixels outside the rim
        const double cover = 1.0 / (1.0 + std::exp(dist / (0.25 * edge)));
        for (std::size_t k = 0; k < M; ++k) {
          double& a = ab[k * H * W + y * W + x];
          a = a * (1.0 - cover) + (k == m ? cover : 0.0);
        }
      }
  }

  HSCube cube(B, H, W);
  for (std::size_t i = 0; i < H * W; ++i) {
    for (std::size_t b = 0; b < B; ++b) {
      double v = 0;
      for (std::size_t m = 0; m < M; ++m) v += ab[m * H * W + i] * spectra[m][b];
      cube.values[b * H * W + i] = static_cast<float>(std::clamp(v * shade[i], 0.0, 1.0));
    }
  }
  return cube;
}

inline std::vector<HSCube> synthetic_dataset(std::size_t count, const SyntheticOptions& opt, std::uint64_t seed) {
  std::vector<HSCube> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::substream(seed, i);
    out.push_back(synthetic_cube(opt, rng));
  }
  return out;
}

}  // namespace pdenet
