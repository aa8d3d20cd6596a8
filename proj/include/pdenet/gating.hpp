#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>

#include "pdenet/errors.hpp"
#include "pdenet/graph.hpp"
#include "pdenet/ops.hpp"
#include "pdenet/rng.hpp"
#include "pdenet/tensor.hpp"

namespace pdenet {

/// How channel gates behave during a forward pass.
///  - warmup: every gate is 1 (the template network).
///  - train:  relaxed Bernoulli masks, differentiable in the logits.
///  - sample: hard {0,1} Bernoulli draws.
///  - expect: the keep probability itself.
enum class GateMode { warmup, train, sample, expect };

inline const char* gate_mode_name(GateMode m) {
  switch (m) {
    case GateMode::warmup: return "warmup";
    case GateMode::train: return "train";
    case GateMode::sample: return "sample";
    case GateMode::expect: return "expect";
  }
  return "?";
}

inline constexpr double kDefaultTau = 2.0 / 3.0;

/// Logit whose keep probability is 0.9.
inline double initial_gate_logit() { return std::log(0.9 / 0.1); }

/// Channel-wise Bernoulli gate: keep probability sigmoid(logit_c), relaxation temperature tau.
template <typename T>
struct GateParams {
  Tensor<T> logits;  // [C]
  double tau = kDefaultTau;

  std::size_t channels() const { return logits.size(); }
};

/// Logistic noise log(u) - log(1 - u), u ~ U(0, 1).
inline double logistic_noise(Rng& rng) {
  const double u = rng.uniform_open();
  return std::log(u) - std::log1p(-u);
}

namespace detail {

inline void check_tau(double tau) {
  if (!(tau > 0.0)) throw ParameterError("gate temperature must be positive, got " + std::to_string(tau));
}

template <typename T>
constexpr T mask_floor() {
  return std::numeric_limits<T>::epsilon();
}

template <typename T>
T relaxed_mask(double logit, double noise, double tau) {
  const T s = static_cast<T>(sigmoid_scalar((logit + noise) / tau));
  return std::clamp(s, mask_floor<T>(), T{1} - mask_floor<T>());
}

inline double keep_probability(double logit) { return sigmoid_scalar(logit); }

}  // namespace detail

/// Relaxed mask sigmoid((logit + log u - log(1-u)) / tau), kept strictly inside (0, 1).
template <typename T>
Tensor<T> sample_soft(const GateParams<T>& gate, Rng& rng) {
  detail::check_tau(gate.tau);
  Tensor<T> out({gate.channels()});
  for (std::size_t c = 0; c < gate.channels(); ++c) {
    out[c] = detail::relaxed_mask<T>(static_cast<double>(gate.logits[c]), logistic_noise(rng), gate.tau);
  }
  return out;
}

/// Hard mask: 1 with probability sigmoid(logit), else 0.
template <typename T>
Tensor<T> sample_hard(const GateParams<T>& gate, Rng& rng) {
  Tensor<T> out({gate.channels()});
  for (std::size_t c = 0; c < gate.channels(); ++c) {
    out[c] = rng.uniform() < detail::keep_probability(static_cast<double>(gate.logits[c])) ? T{1} : T{0};
  }
  return out;
}

template <typename T>
Tensor<T> expectation(const GateParams<T>& gate) {
  Tensor<T> out({gate.channels()});
  for (std::size_t c = 0; c < gate.channels(); ++c) {
    out[c] = static_cast<T>(detail::keep_probability(static_cast<double>(gate.logits[c])));
  }
  return out;
}

/// Random state for the gates of one forward pass. With one generator per
/// batch item, item n draws only from rngs[n]; a single generator is shared
/// by all items in order.
struct GateContext {
  GateMode mode = GateMode::warmup;
  std::span<Rng> rngs;

  Rng& rng_for(std::size_t item) const {
    if (rngs.empty()) throw UsageError(std::string("gate mode '") + gate_mode_name(mode) + "' needs a random generator");
    return rngs.size() == 1 ? rngs[0] : rngs[item];
  }
};

/// Differentiable relaxed mask from explicit noise, shaped like `noise` ([N, C, 1, 1]).
template <typename T>
Var<T> soft_mask(const Var<T>& logits, const Tensor<T>& noise, double tau) {
  detail::check_tau(tau);
  const std::size_t c = logits.value().size();
  const Var<T> row = reshape(logits, {1, c, 1, 1});
  const Var<T> z = scale(add(row, logits.graph()->constant(noise)), static_cast<T>(1.0 / tau));
  return clamp(sigmoid(z), detail::mask_floor<T>(), T{1} - detail::mask_floor<T>());
}

/// Channel mask for a batch of `batch` items, shaped [1|batch, C, 1, 1].
template <typename T>
Var<T> gate_mask(const Var<T>& logits, double tau, const GateContext& ctx, std::size_t batch) {
  Graph<T>& graph = *logits.graph();
  const std::size_t c = logits.value().size();
  switch (ctx.mode) {
    case GateMode::warmup:
      return graph.constant(Tensor<T>({1, c, 1, 1}, T{1}));
    case GateMode::expect:
      return sigmoid(reshape(logits, {1, c, 1, 1}));
    case GateMode::train: {
      if (ctx.rngs.size() > 1 && ctx.rngs.size() != batch) {
        throw DimensionError("gate_mask: " + std::to_string(ctx.rngs.size()) + " generators for a batch of " +
                             std::to_string(batch));
      }
      Tensor<T> noise({batch, c, 1, 1});
      for (std::size_t n = 0; n < batch; ++n) {
        Rng& rng = ctx.rng_for(n);
        for (std::size_t k = 0; k < c; ++k) noise[n * c + k] = static_cast<T>(logistic_noise(rng));
      }
      return soft_mask(logits, noise, tau);
    }
    case GateMode::sample: {
      if (ctx.rngs.size() > 1 && ctx.rngs.size() != batch) {
        throw DimensionError("gate_mask: " + std::to_string(ctx.rngs.size()) + " generators for a batch of " +
                             std::to_string(batch));
      }
      Tensor<T> mask({batch, c, 1, 1});
      for (std::size_t n = 0; n < batch; ++n) {
        Rng& rng = ctx.rng_for(n);
        for (std::size_t k = 0; k < c; ++k) {
          mask[n * c + k] = rng.uniform() < detail::keep_probability(static_cast<double>(logits.value()[k])) ? T{1} : T{0};
        }
      }
      return graph.constant(std::move(mask));
    }
  }
  throw UsageError("gate_mask: unknown mode");
}

}  // namespace pdenet
