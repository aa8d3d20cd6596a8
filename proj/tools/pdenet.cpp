#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "pdenet/commands.hpp"

namespace {

using namespace pdenet;

int run(int argc, char** argv) {
  CLI::App app{"Hyperspectral super-resolution with stochastic gated refinement networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pdenet 1.0.0");

  // prepare
  PrepareOptions prep;
  auto* c_prep = app.add_subcommand("prepare", "Pair HR cubes with LR observations and cut training patches");
  c_prep->add_option("--manifest", prep.manifest, "Input manifest")->required();
  c_prep->add_option("--scale", prep.scale, "Downscaling factor (2, 4 or 8)")->capture_default_str();
  c_prep->add_option("--patch", prep.patch, "HR patch edge for train entries (0: whole cubes)")->capture_default_str();
  c_prep->add_option("--stride", prep.stride, "Patch stride (0: equal to patch)")->capture_default_str();
  c_prep->add_option("--noise-sigma", prep.noise_sigma, "Gaussian noise on synthesised LR cubes")->capture_default_str();
  c_prep->add_option("--seed", prep.seed, "Noise seed")->capture_default_str();
  c_prep->add_option("--out", prep.out, "Output directory")->required();

  // train: every configuration key doubles as a flag
  std::string config_path;
  std::map<std::string, std::string> overrides;
  auto* c_train = app.add_subcommand("train", "Warm up then train a network from a manifest");
  c_train->add_option("--config", config_path, "key=value configuration file");
  const RunConfig defaults;
  for (const ConfigKey& k : config_schema()) {
    auto* opt = c_train->add_option(k.flag(), overrides[k.name], k.help);
    opt->default_str(k.get(defaults));
  }

  // sr
  SrOptions sr;
  auto* c_sr = app.add_subcommand("sr", "Super-resolve LR cubes with Monte-Carlo averaging");
  c_sr->add_option("--checkpoint", sr.checkpoint, "Trained checkpoint")->required();
  c_sr->add_option("--input", sr.input, "LR cube or directory of LR cubes")->required();
  c_sr->add_option("--n-samples", sr.n_samples, "Sampled networks to average")->capture_default_str();
  c_sr->add_option("--seed", sr.seed, "Sampling seed")->capture_default_str();
  c_sr->add_option("--out", sr.out, "Output cube (or directory for a directory input)")->required();
  c_sr->add_flag("--save-samples", sr.save_samples, "Also write every sampled reconstruction");

  // eval
  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "Score predictions against ground truth (MPSNR, MSSIM, SAM)");
  c_eval->add_option("--pred-dir", ev.pred_dir, "Directory of predicted cubes");
  c_eval->add_option("--gt-dir", ev.gt_dir, "Directory of ground-truth cubes")->required();
  c_eval->add_option("--report", ev.report, "Text report path");
  c_eval->add_option("--csv", ev.csv, "Comma-separated table path");
  c_eval->add_flag("--baseline-bicubic", ev.baseline_bicubic, "Score bicubic up-sampling of --lr-dir instead");
  c_eval->add_option("--lr-dir", ev.lr_dir, "Directory of LR cubes for the bicubic baseline");
  c_eval->add_option("--scale", ev.scale, "Up-sampling factor for the bicubic baseline")->capture_default_str();

  // uncertainty
  UncertaintyOptions un;
  auto* c_unc = app.add_subcommand("uncertainty", "Per-voxel disagreement of sampled networks");
  c_unc->add_option("--checkpoint", un.checkpoint, "Trained checkpoint")->required();
  c_unc->add_option("--input", un.input, "LR cube")->required();
  c_unc->add_option("--n-samples", un.n_samples, "Sampled networks (at least 2)")->capture_default_str();
  c_unc->add_option("--seed", un.seed, "Sampling seed")->capture_default_str();
  c_unc->add_option("--out", un.out, "Output cube (percentage / 100)")->required();

  // synth
  SynthOptions syn;
  auto* c_syn = app.add_subcommand("synth", "Generate a synthetic dataset and manifest");
  c_syn->add_option("--train-count", syn.train_count, "Training scenes")->capture_default_str();
  c_syn->add_option("--test-count", syn.test_count, "Test scenes")->capture_default_str();
  c_syn->add_option("--bands", syn.cube.bands, "Spectral bands")->capture_default_str();
  c_syn->add_option("--height", syn.cube.height, "Scene height")->capture_default_str();
  c_syn->add_option("--width", syn.cube.width, "Scene width")->capture_default_str();
  c_syn->add_option("--seed", syn.seed, "Scene seed")->capture_default_str();
  c_syn->add_option("--out", syn.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (c_prep->parsed()) {
    const auto entries = cmd_prepare(prep);
    std::printf("wrote %zu pairs and %s\n", entries.size(), (prep.out / "manifest.txt").string().c_str());
  } else if (c_train->parsed()) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : read_config(config_path);
    for (const ConfigKey& k : config_schema()) {
      if (c_train->count(k.flag()) > 0) k.set(cfg, overrides[k.name]);
    }
    const TrainOutcome r = cmd_train(cfg);
    for (const EpochRecord& e : r.history) std::printf("%s\n", format_epoch(e).c_str());
    std::printf("checkpoint %s\n", r.checkpoint.string().c_str());
  } else if (c_sr->parsed()) {
    for (const auto& p : cmd_sr(sr)) std::printf("wrote %s\n", p.string().c_str());
  } else if (c_eval->parsed()) {
    std::fputs(cmd_eval(ev).to_text().c_str(), stdout);
  } else if (c_unc->parsed()) {
    const UncertaintyMap m = cmd_uncertainty(un);
    double mean = 0;
    for (double v : m.values) mean += v;
    std::printf("wrote %s (mean uncertainty %.3f%%)\n", un.out.string().c_str(), mean / m.values.size());
  } else if (c_syn->parsed()) {
    const auto entries = cmd_synth(syn);
    std::printf("wrote %zu scenes and %s\n", entries.size(), (syn.out / "manifest.txt").string().c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pdenet: error: %s\n", e.what());
    return pdenet::exit_code_for(e);
  }
}
