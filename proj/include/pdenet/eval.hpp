#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "pdenet/errors.hpp"
#include "pdenet/hsdata.hpp"
#include "pdenet/model.hpp"
#include "pdenet/rng.hpp"

namespace pdenet {

// ---------------------------------------------------------------------------
// Monte-Carlo inference

struct McResult {
  HSCube mean;                  // clamped to [0, 1]
  std::vector<HSCube> samples;  // each clamped to [0, 1]
};

/// N forwards with hard gates; sample n draws from Rng::substream(seed, n).
/// The batched path evaluates all N as one batch and matches the sequential
/// path bit for bit.
inline McResult mc_infer(const PdeNet<float>& net, const HSCube& lr, std::size_t n_samples, std::uint64_t seed,
                         bool batched = true) {
  if (n_samples < 1) throw ParameterError("mc_infer needs at least one sample");
  if (lr.bands != net.config().bands) {
    throw DimensionError("input has " + std::to_string(lr.bands) + " bands, model expects " +
                         std::to_string(net.config().bands));
  }
  std::vector<Rng> rngs;
  rngs.reserve(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) rngs.push_back(Rng::substream(seed, n));

  std::vector<Tensor<float>> raw;
  if (batched) {
    std::vector<const HSCube*> copies(n_samples, &lr);
    const Tensor<float> out = net.infer(to_batch<float>(copies), GateContext{GateMode::sample, rngs});
    const std::size_t per = out.size() / n_samples;
    for (std::size_t n = 0; n < n_samples; ++n) {
      Tensor<float> t({1, out.extent(1), out.extent(2), out.extent(3)});
      std::copy_n(out.data() + n * per, per, t.data());
      raw.push_back(std::move(t));
    }
  } else {
    const Tensor<float> x = to_tensor<float>(lr);
    for (std::size_t n = 0; n < n_samples; ++n) {
      raw.push_back(net.infer(x, GateContext{GateMode::sample, std::span<Rng>(&rngs[n], 1)}));
    }
  }

  Tensor<float> mean(raw.front().shape());
  std::vector<double> acc(mean.size(), 0.0);
  for (const Tensor<float>& t : raw)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
  for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / static_cast<double>(n_samples));

  McResult result;
  result.mean = to_cube(mean, 0, true);
  for (const Tensor<float>& t : raw) result.samples.push_back(to_cube(t, 0, true));
  return result;
}

// ---------------------------------------------------------------------------
// Epistemic uncertainty

/// Percentage of samples whose 8-bit level differs from the mean's, per voxel.
struct UncertaintyMap {
  std::size_t bands = 0, height = 0, width = 0;
  std::size_t n_samples = 0;
  std::vector<double> values;  // in [0, 100], multiples of 100/N

  /// Stored as a cube with values divided by 100.
  HSCube to_cube() const {
    HSCube c(bands, height, width);
    for (std::size_t i = 0; i < values.size(); ++i) c.values[i] = static_cast<float>(values[i] / 100.0);
    return c;
  }
};

inline long quantize_255(float v) { return std::lround(static_cast<double>(v) * 255.0); }

namespace detail {
inline void check_same(const HSCube& a, const HSCube& b, const char* what) {
  if (a.bands != b.bands || a.height != b.height || a.width != b.width) {
    throw DimensionError(std::string(what) + ": shape " + std::to_string(a.bands) + "x" + std::to_string(a.height) +
                         "x" + std::to_string(a.width) + " vs " + std::to_string(b.bands) + "x" +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}
}  // namespace detail

inline UncertaintyMap uncertainty(const std::vector<HSCube>& samples, const HSCube& mean) {
  if (samples.size() < 2) throw ParameterError("uncertainty needs at least two samples");
  for (const HSCube& s : samples) detail::check_same(s, mean, "uncertainty");
  UncertaintyMap map{mean.bands, mean.height, mean.width, samples.size(), std::vector<double>(mean.values.size())};
  std::vector<std::uint32_t> count(mean.values.size(), 0);
  for (const HSCube& s : samples)
    for (std::size_t i = 0; i < count.size(); ++i) count[i] += quantize_255(s.values[i]) != quantize_255(mean.values[i]);
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < count.size(); ++i) map.values[i] = 100.0 * count[i] / n;
  return map;
}

/// Mean absolute error of voxels grouped by uncertainty level (one bin per distinct count).
struct UncertaintyBin {
  double level = 0;
  std::size_t count = 0;
  double mean_abs_error = 0;
};

inline std::vector<UncertaintyBin> error_by_uncertainty(const UncertaintyMap& map, const HSCube& pred,
                                                        const HSCube& truth) {
  detail::check_same(pred, truth, "error_by_uncertainty");
  if (map.values.size() != pred.values.size()) throw DimensionError("error_by_uncertainty: map size differs");
  std::vector<UncertaintyBin> bins(map.n_samples + 1);
  for (std::size_t k = 0; k < bins.size(); ++k) bins[k].level = 100.0 * k / static_cast<double>(map.n_samples);
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::lround(map.values[i] * map.n_samples / 100.0));
    bins[k].count += 1;
    bins[k].mean_abs_error += std::fabs(static_cast<double>(pred.values[i]) - truth.values[i]);
  }
  std::vector<UncertaintyBin> out;
  for (UncertaintyBin& b : bins) {
    if (b.count == 0) continue;
    b.mean_abs_error /= static_cast<double>(b.count);
    out.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quality metrics

inline constexpr double kPsnrCap = 100.0;

/// Band-averaged PSNR with peak 1; each band is capped at 100 dB.
inline double mpsnr(const HSCube& pred, const HSCube& truth) {
  detail::check_same(pred, truth, "mpsnr");
  const std::size_t plane = truth.height * truth.width;
  double total = 0;
  for (std::size_t b = 0; b < truth.bands; ++b) {
    double se = 0;
    for (std::size_t i = b * plane; i < (b + 1) * plane; ++i) {
      const double d = static_cast<double>(pred.values[i]) - truth.values[i];
      se += d * d;
    }
    const double mse = se / static_cast<double>(plane);
    total += mse > 0 ? std::min(kPsnrCap, -10.0 * std::log10(mse)) : kPsnrCap;
  }
  return total / static_cast<double>(truth.bands);
}

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

inline std::array<double, kSsimWindow> ssim_weights() {
  std::array<double, kSsimWindow> w{};
  double s = 0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
    w[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

namespace detail {
// Valid-region separable Gaussian filter of one plane.
inline std::vector<double> gauss_valid(const std::vector<double>& p, std::size_t h, std::size_t w,
                                       const std::array<double, kSsimWindow>& k) {
  const std::size_t ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) s += k[i] * p[y * w + x + i];
      rows[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) s += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}
}  // namespace detail

/// Band-averaged SSIM: 11x11 Gaussian window (sigma 1.5), unit dynamic range,
/// mean over the valid region.
inline double mssim(const HSCube& pred, const HSCube& truth) {
  detail::check_same(pred, truth, "mssim");
  const std::size_t h = truth.height, w = truth.width;
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ParameterError("mssim needs spatial extents of at least 11, got " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto k = ssim_weights();
  const std::size_t plane = h * w;
  std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
  double total = 0;
  for (std::size_t band = 0; band < truth.bands; ++band) {
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = pred.values[band * plane + i];
      b[i] = truth.values[band * plane + i];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = detail::gauss_valid(a, h, w, k), mb = detail::gauss_valid(b, h, w, k);
    const auto saa = detail::gauss_valid(aa, h, w, k), sbb = detail::gauss_valid(bb, h, w, k),
               sab = detail::gauss_valid(ab, h, w, k);
    double s = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      s += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += s / static_cast<double>(ma.size());
  }
  return total / static_cast<double>(truth.bands);
}

/// Mean spectral angle in degrees. Two all-zero spectra count as 0 degrees.
inline double sam(const HSCube& pred, const HSCube& truth) {
  detail::check_same(pred, truth, "sam");
  const std::size_t plane = truth.height * truth.width;
  double total = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t b = 0; b < truth.bands; ++b) {
      const double x = pred.values[b * plane + i], y = truth.values[b * plane + i];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    if (na == 0 && nb == 0) continue;
    const double c = std::clamp(dot / std::max(std::sqrt(na * nb), 1e-8), -1.0, 1.0);
    total += std::acos(c);
  }
  return total / static_cast<double>(plane) * 180.0 / std::numbers::pi;
}

// ---------------------------------------------------------------------------
// Reports

struct CubeMetrics {
  std::string name;
  double mpsnr = 0, mssim = 0, sam = 0;
};

struct MetricsReport {
  std::vector<CubeMetrics> cubes;
  double mpsnr = 0, mssim = 0, sam = 0;  // means over cubes

  void add(std::string name, const HSCube& pred, const HSCube& truth) {
    cubes.push_back({std::move(name), pdenet::mpsnr(pred, truth), pdenet::mssim(pred, truth), pdenet::sam(pred, truth)});
    mpsnr = mssim = sam = 0;
    for (const CubeMetrics& c : cubes) {
      mpsnr += c.mpsnr;
      mssim += c.mssim;
      sam += c.sam;
    }
    const double n = static_cast<double>(cubes.size());
    mpsnr /= n;
    mssim /= n;
    sam /= n;
  }

  std::string to_text() const {
    std::string out;
    char buf[256];
    for (const CubeMetrics& c : cubes) {
      std::snprintf(buf, sizeof buf, "%s: mpsnr=%.4f dB mssim=%.6f sam=%.4f deg\n", c.name.c_str(), c.mpsnr, c.mssim,
                    c.sam);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "mean (%zu cubes): mpsnr=%.4f dB mssim=%.6f sam=%.4f deg\n", cubes.size(), mpsnr,
                  mssim, sam);
    return out + buf;
  }

  std::string to_csv() const {
    std::string out = "cube,mpsnr,mssim,sam\n";
    char buf[256];
    for (const CubeMetrics& c : cubes) {
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.8f,%.6f\n", c.name.c_str(), c.mpsnr, c.mssim, c.sam);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "mean,%.6f,%.8f,%.6f\n", mpsnr, mssim, sam);
    return out + buf;
  }
};

}  // namespace pdenet
