#pragma once

// Command implementations behind the `pdenet` tool. Each returns normally on
// success and reports failures through the library's exception types; see
// exit_code_for().

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdenet/binio.hpp"
#include "pdenet/checkpoint.hpp"
#include "pdenet/config.hpp"
#include "pdenet/errors.hpp"
#include "pdenet/eval.hpp"
#include "pdenet/hsdata.hpp"
#include "pdenet/synthetic.hpp"
#include "pdenet/train.hpp"

namespace pdenet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

/// Map an exception to the process exit status.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) || dynamic_cast<const UsageError*>(&e)) {
    return kExitConfig;
  }
  return kExitFailure;
}

namespace detail {

inline std::vector<std::filesystem::path> cube_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".hsc") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// A single file, or every .hsc file of a directory (sorted by name).
inline std::vector<std::filesystem::path> inputs_of(const std::filesystem::path& p) {
  if (std::filesystem::is_directory(p)) return cube_files(p);
  if (!std::filesystem::exists(p)) throw IoError(p.string() + " does not exist");
  return {p};
}

inline std::string indexed(const std::string& stem, std::size_t i, std::size_t count) {
  if (count == 1) return stem;
  char buf[32];
  std::snprintf(buf, sizeof buf, "_p%04zu", i);
  return stem + buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct PrepareOptions {
  std::filesystem::path manifest;
  std::size_t scale = 4;
  std::size_t patch = 0;   // 0 keeps whole cubes
  std::size_t stride = 0;  // 0: equal to patch
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

/// Paired HR/LR cubes under out/{hr,lr} plus out/manifest.txt. Train entries
/// are cut into patches; test entries stay whole.
inline std::vector<ManifestEntry> cmd_prepare(const PrepareOptions& opt) {
  if (opt.scale != 2 && opt.scale != 4 && opt.scale != 8) throw ConfigError("scale must be 2, 4 or 8");
  if (!(opt.noise_sigma >= 0)) throw ConfigError("noise sigma must be non-negative");
  const auto entries = read_manifest(opt.manifest);
  const auto pairs_train = load_pairs(entries, Role::train, opt.scale, opt.noise_sigma, opt.seed);
  const auto pairs_test = load_pairs(entries, Role::test, opt.scale, opt.noise_sigma, opt.seed);
  std::vector<ManifestEntry> derived;
  std::size_t ti = 0, si = 0;
  for (const ManifestEntry& e : entries) {
    const bool train = e.role == Role::train;
    const TrainPair& pair = train ? pairs_train[ti++] : pairs_test[si++];
    const auto pieces = train ? patchify(pair, opt.scale, opt.patch, opt.stride) : std::vector<TrainPair>{pair};
    const std::string stem = e.hr.stem().string();
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const std::string name = detail::indexed(stem, i, pieces.size()) + ".hsc";
      ManifestEntry d{e.role, opt.out / "hr" / name, opt.out / "lr" / name};
      write_cube(pieces[i].hr, d.hr);
      write_cube(pieces[i].lr, *d.lr);
      derived.push_back(std::move(d));
    }
  }
  binio::write_text_atomic(opt.out / "manifest.txt", format_manifest(derived, opt.out));
  return derived;
}

// ---------------------------------------------------------------------------

inline TrainOutcome cmd_train(const RunConfig& cfg) {
  validate_config(cfg);
  return train(cfg.manifest, cfg.net, cfg.train, cfg.out);
}

// ---------------------------------------------------------------------------

struct SrOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;  // LR cube or directory of LR cubes
  std::size_t n_samples = 1;
  std::uint64_t seed = 0;
  std::filesystem::path out;    // file for a single input, directory otherwise
  bool save_samples = false;
};

namespace detail {
inline std::filesystem::path output_for(const std::filesystem::path& in, const SrOptions& opt, bool many) {
  return many ? opt.out / in.filename() : opt.out;
}
}  // namespace detail

/// Posterior-mean reconstruction of each input; returns the written paths.
inline std::vector<std::filesystem::path> cmd_sr(const SrOptions& opt) {
  if (opt.n_samples < 1) throw ConfigError("n-samples must be at least 1");
  const PdeNet<float> net = load_checkpoint(opt.checkpoint);
  const bool many = std::filesystem::is_directory(opt.input);
  std::vector<std::filesystem::path> written;
  for (const auto& in : detail::inputs_of(opt.input)) {
    const McResult r = mc_infer(net, read_cube(in), opt.n_samples, opt.seed);
    const auto dst = detail::output_for(in, opt, many);
    write_cube(r.mean, dst);
    written.push_back(dst);
    if (opt.save_samples) {
      for (std::size_t n = 0; n < r.samples.size(); ++n) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, "_s%03zu", n);
        auto p = dst;
        p.replace_filename(dst.stem().string() + suffix + dst.extension().string());
        write_cube(r.samples[n], p);
      }
    }
  }
  return written;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::filesystem::path pred_dir;
  std::filesystem::path gt_dir;
  std::filesystem::path report;       // text report
  std::filesystem::path csv;          // optional table
  bool baseline_bicubic = false;      // score bicubic up-sampling of lr_dir instead of pred_dir
  std::filesystem::path lr_dir;
  std::size_t scale = 4;
};

/// Scores every ground-truth cube against the same-named prediction.
inline MetricsReport cmd_eval(const EvalOptions& opt) {
  if (opt.baseline_bicubic) {
    if (opt.lr_dir.empty()) throw ConfigError("--baseline-bicubic needs --lr-dir");
    if (opt.scale != 2 && opt.scale != 4 && opt.scale != 8) throw ConfigError("scale must be 2, 4 or 8");
  } else if (opt.pred_dir.empty()) {
    throw ConfigError("--pred-dir is required unless --baseline-bicubic is given");
  }
  MetricsReport report;
  const auto gts = detail::cube_files(opt.gt_dir);
  if (gts.empty()) throw ConfigError(opt.gt_dir.string() + " holds no .hsc cubes");
  for (const auto& gt_path : gts) {
    const HSCube gt = read_cube(gt_path);
    const HSCube pred = opt.baseline_bicubic ? upsample_bicubic(read_cube(opt.lr_dir / gt_path.filename()), opt.scale)
                                             : read_cube(opt.pred_dir / gt_path.filename());
    report.add(gt_path.stem().string(), pred, gt);
  }
  if (!opt.report.empty()) binio::write_text_atomic(opt.report, report.to_text());
  if (!opt.csv.empty()) binio::write_text_atomic(opt.csv, report.to_csv());
  return report;
}

// ---------------------------------------------------------------------------

struct UncertaintyOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path input;
  std::size_t n_samples = 10;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

/// Per-voxel disagreement map written as a cube holding percentage / 100.
inline UncertaintyMap cmd_uncertainty(const UncertaintyOptions& opt) {
  if (opt.n_samples < 2) throw ConfigError("n-samples must be at least 2 for an uncertainty map");
  const PdeNet<float> net = load_checkpoint(opt.checkpoint);
  const McResult r = mc_infer(net, read_cube(opt.input), opt.n_samples, opt.seed);
  UncertaintyMap map = uncertainty(r.samples, r.mean);
  write_cube(map.to_cube(), opt.out);
  return map;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::size_t train_count = 8;
  std::size_t test_count = 2;
  SyntheticOptions cube;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

/// Synthetic scenes under out/cubes plus out/manifest.txt listing them.
inline std::vector<ManifestEntry> cmd_synth(const SynthOptions& opt) {
  if (opt.train_count + opt.test_count == 0) throw ConfigError("nothing to generate");
  if (opt.cube.bands < 1 || opt.cube.height < 1 || opt.cube.width < 1) throw ConfigError("cube extents must be positive");
  const auto cubes = synthetic_dataset(opt.train_count + opt.test_count, opt.cube, opt.seed);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < cubes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene%03zu.hsc", i);
    ManifestEntry e{i < opt.train_count ? Role::train : Role::test, opt.out / "cubes" / name, std::nullopt};
    write_cube(cubes[i], e.hr);
    entries.push_back(std::move(e));
  }
  binio::write_text_atomic(opt.out / "manifest.txt", format_manifest(entries, opt.out));
  return entries;
}

}  // namespace pdenet
