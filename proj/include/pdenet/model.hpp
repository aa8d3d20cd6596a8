#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pdenet/errors.hpp"
#include "pdenet/gating.hpp"
#include "pdenet/graph.hpp"
#include "pdenet/ops.hpp"
#include "pdenet/rng.hpp"
#include "pdenet/tensor.hpp"

namespace pdenet {

/// Architecture hyper-parameters.
struct NetConfig {
  std::size_t bands = 31;
  std::size_t scale = 4;
  std::size_t stages = 4;
  std::size_t units = 3;
  std::size_t channels = 32;
  double tau = kDefaultTau;

  /// Receptive field of the learned degradation layer.
  std::size_t degrade_kernel() const {
    switch (scale) {
      case 2: return 3;
      case 4: return 5;
      default: return 9;
    }
  }

  void validate() const {
    if (bands < 1) throw ParameterError("bands must be at least 1");
    if (scale != 2 && scale != 4 && scale != 8) {
      throw ParameterError("scale must be 2, 4 or 8, got " + std::to_string(scale));
    }
    if (stages < 1) throw ParameterError("stages must be at least 1");
    if (units < 1) throw ParameterError("units per stage must be at least 1");
    if (channels < 4) throw ParameterError("channels must be at least 4, got " + std::to_string(channels));
    if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Ordered, named parameter tensors.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  std::size_t add(std::string name, Tensor<T> value) {
    if (lookup_.count(name)) throw UsageError("duplicate parameter " + name);
    lookup_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value)});
    return entries_.size() - 1;
  }

  std::size_t index(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) throw UsageError("no parameter named " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  Tensor<T>& operator[](std::size_t i) { return entries_.at(i).value; }
  const Tensor<T>& operator[](std::size_t i) const { return entries_.at(i).value; }
  Tensor<T>& operator[](const std::string& name) { return entries_[index(name)].value; }
  const Tensor<T>& operator[](const std::string& name) const { return entries_[index(name)].value; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> lookup_;
};

/// Parameters of one graph evaluation: leaves are created on first use, so a
/// parameter that never enters the graph (e.g. gate logits in warm-up) gets no
/// gradient at all.
template <typename T>
class Binding {
 public:
  Binding(Graph<T>& graph, const ParamSet<T>& params) : graph_(graph), params_(params), vars_(params.size()) {}

  Graph<T>& graph() { return graph_; }

  const Var<T>& get(std::size_t i) {
    if (!vars_[i].valid()) vars_[i] = graph_.parameter(params_[i]);
    return vars_[i];
  }

  /// Gradients after graph().backward(); nullopt for parameters that were never used.
  std::vector<std::optional<Tensor<T>>> grads() const {
    std::vector<std::optional<Tensor<T>>> out(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].valid() && vars_[i].requires_grad()) out[i] = graph_.grad(vars_[i]);
    }
    return out;
  }

 private:
  Graph<T>& graph_;
  const ParamSet<T>& params_;
  std::vector<Var<T>> vars_;
};

/// The multi-stage gated super-resolution network. Holds parameters only;
/// every forward pass runs against a caller-provided graph.
template <typename T>
class PdeNet {
 public:
  struct UnitIds {
    std::size_t spe_w, spe_b, spa_w, spa_b, gate_l;
  };
  struct AggIds {
    std::size_t gate_k, compress_w, compress_b;
  };
  struct StageIds {
    std::size_t stem_w, stem_b;
    std::vector<AggIds> agg;
    std::vector<UnitIds> units;
    std::size_t head_w, head_b, tail_w, tail_b;
  };

  struct Output {
    Var<T> hr;        // reconstruction at the final stage
    Var<T> lr_reproj; // degrade(hr)
  };

  /// Randomly initialised network.
  PdeNet(NetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    cfg_.tau = static_cast<float>(cfg_.tau);  // checkpoints store tau as f32
    declare();
    initialize(seed);
  }

  /// Network over existing parameters; names and shapes must match `cfg`.
  PdeNet(NetConfig cfg, ParamSet<T> params) : cfg_(cfg) {
    cfg_.validate();
    cfg_.tau = static_cast<float>(cfg_.tau);
    declare();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string& name = params_.name(i);
      if (!params.contains(name)) throw FormatError("missing parameter " + name);
      const Tensor<T>& src = params[name];
      if (src.shape() != params_[i].shape()) {
        throw FormatError("parameter " + name + " has shape " + shape_str(src.shape()) + ", expected " +
                          shape_str(params_[i].shape()));
      }
      params_[i] = src;
    }
    if (params.size() != params_.size()) throw FormatError("unexpected extra parameters for this configuration");
  }

  const NetConfig& config() const noexcept { return cfg_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  const std::vector<StageIds>& stage_ids() const noexcept { return stages_; }
  std::size_t degrade_w() const noexcept { return degrade_w_; }
  std::size_t degrade_b() const noexcept { return degrade_b_; }

  template <typename U>
  PdeNet<U> cast() const {
    return PdeNet<U>(cfg_, params_.template cast<U>());
  }

  /// Embedding unit: O = x + spe(x)*m1; out = O + spa(O)*m2.
  Var<T> unit_forward(Binding<T>& b, std::size_t stage, std::size_t unit, const Var<T>& x,
                      const GateContext& ctx) const {
    const UnitIds& u = stages_.at(stage).units.at(unit);
    const std::size_t c = cfg_.channels;
    check_channels(x, c, "unit input");
    const std::size_t batch = x.shape()[0];
    Var<T> spe = conv2d(x, b.get(u.spe_w), b.get(u.spe_b));
    Var<T> spa_in;
    if (ctx.mode == GateMode::warmup) {
      spa_in = add(x, spe);
      Var<T> spa = conv2d(spa_in, b.get(u.spa_w), b.get(u.spa_b), {1, 1, c});
      return add(spa_in, spa);
    }
    const Var<T> mask = gate_mask(b.get(u.gate_l), cfg_.tau, ctx, batch);
    const Var<T> m1 = slice_channels(mask, 0, c);
    const Var<T> m2 = slice_channels(mask, c, c);
    spa_in = add(x, mul(spe, m1));
    Var<T> spa = conv2d(spa_in, b.get(u.spa_w), b.get(u.spa_b), {1, 1, c});
    return add(spa_in, mul(spa, m2));
  }

  /// Gated aggregation of features F^(0..j-1) feeding unit j (1-based `j`).
  Var<T> aggregate(Binding<T>& b, std::size_t stage, std::size_t j, const std::vector<Var<T>>& features,
                   const GateContext& ctx) const {
    if (j < 1 || j > cfg_.units) throw DimensionError("aggregate: unit index out of range");
    if (features.size() != j) {
      throw DimensionError("aggregate: unit " + std::to_string(j) + " takes " + std::to_string(j) + " features, got " +
                           std::to_string(features.size()));
    }
    for (const Var<T>& f : features) check_channels(f, cfg_.channels, "aggregated feature");
    const AggIds& a = stages_.at(stage).agg.at(j - 1);
    Var<T> cat = features.size() == 1 ? features.front() : concat_channels(features);
    if (ctx.mode != GateMode::warmup) {
      cat = mul(cat, gate_mask(b.get(a.gate_k), cfg_.tau, ctx, cat.shape()[0]));
    }
    return relu(conv2d(cat, b.get(a.compress_w), b.get(a.compress_b)));
  }

  /// Residual regressor of one stage: LR [N,B,h,w] -> HR residual [N,B,ah,aw].
  Var<T> stage_forward(Binding<T>& b, std::size_t stage, const Var<T>& lr, const GateContext& ctx) const {
    check_channels(lr, cfg_.bands, "stage input");
    const StageIds& s = stages_.at(stage);
    std::vector<Var<T>> feats;
    feats.reserve(cfg_.units + 1);
    feats.push_back(conv2d(lr, b.get(s.stem_w), b.get(s.stem_b)));
    for (std::size_t j = 1; j <= cfg_.units; ++j) {
      Var<T> agg = aggregate(b, stage, j, feats, ctx);
      feats.push_back(unit_forward(b, stage, j - 1, agg, ctx));
    }
    Var<T> lifted = conv2d(feats.back(), b.get(s.head_w), b.get(s.head_b), {1, 1, 1});
    Var<T> up = pixel_shuffle(lifted, cfg_.scale);
    return conv2d(up, b.get(s.tail_w), b.get(s.tail_b), {1, 1, 1});
  }

  /// The shared learned degradation: stride-alpha convolution over edge-replicated borders.
  Var<T> degrade(Binding<T>& b, const Var<T>& hr) const {
    check_channels(hr, cfg_.bands, "degradation input");
    const Dims4 d = Dims4::of(hr.shape());
    if (d.h % cfg_.scale != 0 || d.w % cfg_.scale != 0) {
      throw DimensionError("degrade: extents " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                           " not divisible by scale " + std::to_string(cfg_.scale));
    }
    const std::size_t k = cfg_.degrade_kernel();
    return conv2d(pad_replicate(hr, (k - 1) / 2), b.get(degrade_w_), b.get(degrade_b_), {cfg_.scale, 0, 1});
  }

  /// Coarse estimate plus T-1 source-consistent refinements.
  Output forward(Binding<T>& b, const Var<T>& lr, const GateContext& ctx) const {
    const Dims4 d = Dims4::of(lr.shape(), "network input");
    check_channels(lr, cfg_.bands, "network input");
    Graph<T>& graph = b.graph();
    Var<T> y = add(stage_forward(b, 0, lr, ctx),
                   graph.constant(bicubic_resize(lr.value(), d.h * cfg_.scale, d.w * cfg_.scale)));
    for (std::size_t t = 1; t < cfg_.stages; ++t) {
      y = add(stage_forward(b, t, sub(lr, degrade(b, y)), ctx), y);
    }
    return {y, degrade(b, y)};
  }

  /// Convenience: forward without gradient recording, returning the HR values.
  Tensor<T> infer(const Tensor<T>& lr, const GateContext& ctx) const {
    Graph<T> graph(false);
    Binding<T> b(graph, params_);
    return forward(b, graph.constant(lr), ctx).hr.value();
  }

 private:
  static void check_channels(const Var<T>& x, std::size_t c, const char* what) {
    const Dims4 d = Dims4::of(x.shape(), what);
    if (d.c != c) {
      throw DimensionError(std::string(what) + ": expected " + std::to_string(c) + " channels, got " +
                           std::to_string(d.c));
    }
  }

  void declare() {
    const std::size_t B = cfg_.bands, C = cfg_.channels, a = cfg_.scale;
    auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
      std::size_t w = params_.add(name + ".weight", Tensor<T>({cout, cin, k, k}));
      std::size_t bias = params_.add(name + ".bias", Tensor<T>({cout}));
      return std::pair{w, bias};
    };
    for (std::size_t t = 0; t < cfg_.stages; ++t) {
      const std::string p = "stage" + std::to_string(t) + ".";
      StageIds s{};
      std::tie(s.stem_w, s.stem_b) = conv(p + "stem", C, B, 1);
      for (std::size_t j = 1; j <= cfg_.units; ++j) {
        AggIds agg{};
        const std::string ap = p + "agg" + std::to_string(j);
        agg.gate_k = params_.add(ap + ".gate_k", Tensor<T>({j * C}));
        std::tie(agg.compress_w, agg.compress_b) = conv(ap + ".compress", C, j * C, 1);
        s.agg.push_back(agg);
        UnitIds u{};
        const std::string up = p + "unit" + std::to_string(j);
        std::tie(u.spe_w, u.spe_b) = conv(up + ".spe", C, C, 1);
        std::tie(u.spa_w, u.spa_b) = conv(up + ".spa", C, 1, 3);
        u.gate_l = params_.add(up + ".gate_l", Tensor<T>({2 * C}));
        s.units.push_back(u);
      }
      std::tie(s.head_w, s.head_b) = conv(p + "head", B * a * a, C, 3);
      std::tie(s.tail_w, s.tail_b) = conv(p + "tail", B, B, 3);
      stages_.push_back(std::move(s));
    }
    std::tie(degrade_w_, degrade_b_) = conv("degrade", B, B, cfg_.degrade_kernel());
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    const T logit0 = static_cast<T>(initial_gate_logit());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      const std::string& name = params_.name(i);
      if (name.ends_with(".gate_k") || name.ends_with(".gate_l")) {
        p.fill(logit0);
      } else if (name.ends_with(".bias")) {
        p.fill(T{0});
      } else if (i == degrade_w_) {
        // per-band box filter over the receptive field
        const std::size_t k = cfg_.degrade_kernel();
        const T v = static_cast<T>(1.0 / static_cast<double>(k * k));
        for (std::size_t o = 0; o < cfg_.bands; ++o)
          for (std::size_t y = 0; y < k; ++y)
            for (std::size_t x = 0; x < k; ++x) p.at(o, o, y, x) = v;
      } else {
        const std::size_t fan_in = p.shape()[1] * p.shape()[2] * p.shape()[3];
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (T& v : p.values()) v = static_cast<T>(rng.uniform(-s, s));
      }
    }
  }

  NetConfig cfg_;
  ParamSet<T> params_;
  std::vector<StageIds> stages_;
  std::size_t degrade_w_ = 0, degrade_b_ = 0;
};

/// mean|yhat - y| + lambda * mean((xhat - x)^2).
template <typename T>
Var<T> pde_loss(const Var<T>& yhat, const Var<T>& y, const Var<T>& xhat, const Var<T>& x, T lambda) {
  if (yhat.shape() != y.shape()) {
    throw DimensionError("loss: prediction " + shape_str(yhat.shape()) + " vs target " + shape_str(y.shape()));
  }
  if (xhat.shape() != x.shape()) {
    throw DimensionError("loss: re-degraded " + shape_str(xhat.shape()) + " vs input " + shape_str(x.shape()));
  }
  const Var<T> l1 = mean(abs(sub(yhat, y)));
  const Var<T> diff = sub(xhat, x);
  const Var<T> l2 = mean(mul(diff, diff));
  return add(l1, scale(l2, lambda));
}

}  // namespace pdenet
