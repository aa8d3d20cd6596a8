#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pdenet/binio.hpp"
#include "pdenet/checkpoint.hpp"
#include "pdenet/errors.hpp"
#include "pdenet/hsdata.hpp"
#include "pdenet/model.hpp"
#include "pdenet/rng.hpp"

namespace pdenet {

struct TrainConfig {
  double lr0 = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t halve_every = 25;
  std::size_t warmup_epochs = 5;
  std::size_t main_epochs = 20;
  std::size_t batch = 2;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  double tau = kDefaultTau;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t patch = 0;             // HR patch edge; 0 trains on whole cubes
  std::size_t stride = 0;            // 0: same as patch
  double noise_sigma = 0.0;          // LR synthesis noise when the manifest has no LR path
  bool augment = true;
  bool log_wall_time = true;         // false writes secs=0 for replayable logs

  void validate() const {
    if (!(lr0 > 0)) throw ParameterError("lr0 must be positive");
    if (!(beta1 >= 0 && beta1 < 1)) throw ParameterError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ParameterError("beta2 must lie in [0, 1)");
    if (!(eps > 0)) throw ParameterError("eps must be positive");
    if (halve_every < 1) throw ParameterError("halve_every must be at least 1");
    if (batch < 1) throw ParameterError("batch must be at least 1");
    if (!(lambda >= 0)) throw ParameterError("lambda must be non-negative");
    if (!(tau > 0)) throw ParameterError("tau must be positive");
    if (!(noise_sigma >= 0)) throw ParameterError("noise_sigma must be non-negative");
  }
};

/// Main-phase learning rate; warm-up always runs at lr0.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::ldexp(1.0, -static_cast<int>(epoch / cfg.halve_every));
}

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::vector<std::uint64_t> steps;  // per parameter; unused parameters do not advance

  explicit AdamState(const ParamSet<T>& params) : steps(params.size(), 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.emplace_back(params[i].shape());
      v.emplace_back(params[i].shape());
    }
  }
};

/// One Adam update with bias correction. Parameters without a gradient are left alone.
template <typename T>
void adam_step(AdamState<T>& state, ParamSet<T>& params, const std::vector<std::optional<Tensor<T>>>& grads,
               double lr, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw UsageError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    const Tensor<T>& g = *grads[i];
    if (g.shape() != params[i].shape()) throw DimensionError("adam_step: gradient shape mismatch for " + params.name(i));
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(static_cast<double>(g[k]))) {
        throw DivergenceError("non-finite gradient in parameter " + params.name(i) + " at element " +
                              std::to_string(k));
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) continue;
    const std::uint64_t t = ++state.steps[i];
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const Tensor<T>& g = *grads[i];
    Tensor<T>& p = params[i];
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps));
    }
  }
}

/// An HR target with its LR observation.
struct TrainPair {
  HSCube hr, lr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  double secs = 0;
  bool warmup = false;
};

inline std::string format_epoch(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%zu lr=%.6g loss=%.6f secs=%.3f", r.epoch, r.lr, r.loss, r.secs);
  return buf;
}

struct TrainHooks {
  std::function<void(const EpochRecord&, const PdeNet<float>&)> on_epoch;
};

// Stream indices below the run seed.
inline constexpr std::uint64_t kInitStream = 0;
inline constexpr std::uint64_t kOrderStream = 1;
inline constexpr std::uint64_t kGateStream = 2;
inline constexpr std::uint64_t kDataStream = 3;

inline std::uint64_t init_seed(std::uint64_t seed) { return Rng::substream(seed, kInitStream).next(); }

/// Loss of one LR/HR pair; gradients are accumulated into `grads` scaled by `weight`.
inline double accumulate_sample(const PdeNet<float>& net, const TrainPair& pair, const GateContext& ctx, float lambda,
                                float weight, std::vector<std::optional<Tensor<float>>>& grads) {
  Graph<float> graph;
  Binding<float> bind(graph, net.params());
  const Var<float> x = graph.constant(to_tensor<float>(pair.lr));
  const Var<float> y = graph.constant(to_tensor<float>(pair.hr));
  const auto out = net.forward(bind, x, ctx);
  const Var<float> loss = pde_loss(out.hr, y, out.lr_reproj, x, lambda);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw DivergenceError("loss became non-finite");
  graph.backward(loss);
  auto g = bind.grads();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g[i]) continue;
    if (!grads[i]) grads[i] = Tensor<float>(g[i]->shape());
    float* dst = grads[i]->data();
    const float* src = g[i]->data();
    for (std::size_t k = 0; k < g[i]->size(); ++k) dst[k] += weight * src[k];
  }
  return value;
}

/// Two-phase optimisation in memory: warm-up with gates open, then joint
/// training of weights and gate logits. Deterministic for a fixed seed.
inline std::vector<EpochRecord> fit(PdeNet<float>& net, const std::vector<TrainPair>& data, const TrainConfig& cfg,
                                    const TrainHooks& hooks = {}) {
  cfg.validate();
  const std::size_t epochs = cfg.warmup_epochs + cfg.main_epochs;
  if (epochs > 0 && data.empty()) throw ConfigError("training needs at least one training cube");
  Rng order = Rng::substream(cfg.seed, kOrderStream);
  Rng gate_rng = Rng::substream(cfg.seed, kGateStream);
  AdamState<float> adam(net.params());
  std::vector<std::size_t> perm(data.size());
  std::vector<EpochRecord> history;

  for (std::size_t e = 0; e < epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    const bool warm = e < cfg.warmup_epochs;
    const double lr = warm ? cfg.lr0 : lr_at(e - cfg.warmup_epochs, cfg);
    const GateContext ctx{warm ? GateMode::warmup : GateMode::train, std::span<Rng>(&gate_rng, 1)};

    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[order.below(i)]);

    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t s = 0; s < perm.size(); s += cfg.batch) {
      const std::size_t count = std::min(cfg.batch, perm.size() - s);
      std::vector<std::optional<Tensor<float>>> grads(net.params().size());
      double batch_loss = 0;
      for (std::size_t k = 0; k < count; ++k) {
        const TrainPair& src = data[perm[s + k]];
        const int code = cfg.augment ? static_cast<int>(order.below(8)) : 0;
        double l;
        if (code == 0) {
          l = accumulate_sample(net, src, ctx, static_cast<float>(cfg.lambda), 1.0f / count, grads);
        } else {
          const TrainPair aug{augment(src.hr, code), augment(src.lr, code)};
          l = accumulate_sample(net, aug, ctx, static_cast<float>(cfg.lambda), 1.0f / count, grads);
        }
        batch_loss += l;
      }
      adam_step(adam, net.params(), grads, lr, cfg);
      loss_sum += batch_loss / count;
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(steps);
    rec.warmup = warm;
    if (cfg.log_wall_time) {
      rec.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, net);
  }
  return history;
}

/// Mean loss over `data` without updating anything (gates open).
inline double evaluate_loss(const PdeNet<float>& net, const std::vector<TrainPair>& data, double lambda,
                            GateMode mode = GateMode::warmup) {
  if (mode == GateMode::train || mode == GateMode::sample) throw UsageError("evaluate_loss needs a deterministic mode");
  double sum = 0;
  for (const TrainPair& p : data) {
    Graph<float> graph(false);
    Binding<float> bind(graph, net.params());
    const Var<float> x = graph.constant(to_tensor<float>(p.lr));
    const Var<float> y = graph.constant(to_tensor<float>(p.hr));
    const auto out = net.forward(bind, x, GateContext{mode, {}});
    sum += pde_loss(out.hr, y, out.lr_reproj, x, static_cast<float>(lambda)).value()[0];
  }
  return data.empty() ? 0.0 : sum / static_cast<double>(data.size());
}

/// Split a pair into aligned HR/LR patches; `patch` is the HR edge.
inline std::vector<TrainPair> patchify(const TrainPair& pair, std::size_t scale, std::size_t patch,
                                       std::size_t stride) {
  if (patch == 0) return {pair};
  if (stride == 0) stride = patch;
  if (patch % scale != 0 || stride % scale != 0) {
    throw ConfigError("patch and stride must be multiples of the scale factor " + std::to_string(scale));
  }
  if (patch > pair.hr.height || patch > pair.hr.width) {
    throw ConfigError("patch " + std::to_string(patch) + " exceeds cube extent " + std::to_string(pair.hr.height) +
                      "x" + std::to_string(pair.hr.width));
  }
  std::vector<TrainPair> out;
  for (std::size_t y : window_offsets(pair.hr.height, patch, stride)) {
    for (std::size_t x : window_offsets(pair.hr.width, patch, stride)) {
      // trailing windows may be edge-anchored; snap them to the LR grid
      const std::size_t ys = y / scale * scale, xs = x / scale * scale;
      out.push_back({crop(pair.hr, ys, xs, patch, patch), crop(pair.lr, ys / scale, xs / scale, patch / scale,
                                                                patch / scale)});
    }
  }
  return out;
}

/// HR/LR pairs for every manifest entry of `role`. Missing LR cubes are
/// synthesised; each entry draws its noise from its own substream.
inline std::vector<TrainPair> load_pairs(const std::vector<ManifestEntry>& entries, Role role, std::size_t scale,
                                         double noise_sigma, std::uint64_t seed) {
  std::vector<TrainPair> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ManifestEntry& e = entries[i];
    if (e.role != role) continue;
    TrainPair p;
    p.hr = read_cube(e.hr);
    if (e.lr) {
      p.lr = read_cube(*e.lr);
      if (p.lr.bands != p.hr.bands || p.lr.height * scale != p.hr.height || p.lr.width * scale != p.hr.width) {
        throw ConfigError(e.lr->string() + ": LR cube does not match " + e.hr.string() + " at scale " +
                          std::to_string(scale));
      }
    } else {
      if (p.hr.height % scale != 0 || p.hr.width % scale != 0) {
        throw ConfigError(e.hr.string() + ": extents not divisible by scale " + std::to_string(scale));
      }
      Rng rng = Rng::substream(seed ^ 0x9E3779B97F4A7C15ull, kDataStream + i);
      p.lr = make_lr(p.hr, scale, noise_sigma, rng);
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct TrainOutcome {
  std::vector<EpochRecord> history;
  std::filesystem::path checkpoint, log;
};

/// Full protocol from a manifest: writes checkpoint.pdec and train.log into
/// `out_dir`. On divergence the last good parameters are saved before rethrowing.
inline TrainOutcome train(const std::filesystem::path& manifest, const NetConfig& net_cfg, const TrainConfig& cfg,
                          const std::filesystem::path& out_dir) {
  cfg.validate();
  NetConfig nc = net_cfg;
  nc.tau = cfg.tau;
  nc.validate();
  const auto entries = read_manifest(manifest);
  std::vector<TrainPair> data;
  for (TrainPair& p : load_pairs(entries, Role::train, nc.scale, cfg.noise_sigma, cfg.seed)) {
    if (p.hr.bands != nc.bands) {
      throw ConfigError("training cube has " + std::to_string(p.hr.bands) + " bands, configuration expects " +
                        std::to_string(nc.bands));
    }
    for (TrainPair& q : patchify(p, nc.scale, cfg.patch, cfg.stride)) data.push_back(std::move(q));
  }
  if (data.empty()) throw ConfigError(manifest.string() + ": no train entries");

  PdeNet<float> net(nc, init_seed(cfg.seed));
  TrainOutcome outcome{{}, out_dir / "checkpoint.pdec", out_dir / "train.log"};
  std::string log_text;
  ParamSet<float> last_good = net.params();
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r, const PdeNet<float>& n) {
    log_text += format_epoch(r) + "\n";
    binio::write_text_atomic(outcome.log, log_text);
    last_good = n.params();
    if (cfg.checkpoint_every > 0 && (r.epoch + 1) % cfg.checkpoint_every == 0) save_checkpoint(n, outcome.checkpoint);
  };
  try {
    outcome.history = fit(net, data, cfg, hooks);
  } catch (const DivergenceError&) {
    save_checkpoint(PdeNet<float>(nc, last_good), outcome.checkpoint);
    throw;
  }
  binio::write_text_atomic(outcome.log, log_text);
  save_checkpoint(net, outcome.checkpoint);
  return outcome;
}

}  // namespace pdenet
