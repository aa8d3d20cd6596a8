#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pdenet/errors.hpp"
#include "pdenet/graph.hpp"
#include "pdenet/tensor.hpp"

namespace pdenet {

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

namespace detail {

/// Geometry shared by the convolution kernels.
struct ConvGeometry {
  Dims4 in;
  std::size_t cout = 0, kh = 0, kw = 0;
  std::size_t stride = 1, pad = 0, groups = 1;
  std::size_t oh = 0, ow = 0;

  std::size_t cin_g() const { return in.c / groups; }
  std::size_t cout_g() const { return cout / groups; }

  /// Output columns [lo, hi) whose tap `k` lands inside an input row of `extent`.
  static std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t pad, std::size_t stride,
                                                         std::size_t extent, std::size_t out) {
    // ox*stride + k - pad in [0, extent)
    const long long kk = static_cast<long long>(k) - static_cast<long long>(pad);
    const long long s = static_cast<long long>(stride);
    long long lo = kk >= 0 ? 0 : (-kk + s - 1) / s;
    long long hi_incl = (static_cast<long long>(extent) - 1 - kk);
    long long hi = hi_incl < 0 ? 0 : hi_incl / s + 1;
    hi = std::min<long long>(hi, static_cast<long long>(out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const ConvOptions& opt) {
  ConvGeometry g;
  g.in = Dims4::of(x, "conv2d input");
  if (w.size() != 4) throw DimensionError("conv2d kernel must be 4-D, got " + shape_str(w));
  if (opt.stride == 0) throw ParameterError("conv2d: stride must be positive");
  if (opt.groups == 0) throw ParameterError("conv2d: groups must be positive");
  if (g.in.c % opt.groups != 0) {
    throw DimensionError("conv2d: input channels " + std::to_string(g.in.c) + " not divisible by groups " +
                         std::to_string(opt.groups));
  }
  g.cout = w[0];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (g.cout % opt.groups != 0) {
    throw DimensionError("conv2d: output channels " + std::to_string(g.cout) + " not divisible by groups");
  }
  if (w[1] != g.cin_g()) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(w[1]) + " input channels per group, input has " +
                         std::to_string(g.cin_g()));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ParameterError("conv2d: kernel extents must be odd, got " + shape_str(w));
  if (g.in.h + 2 * g.pad < g.kh || g.in.w + 2 * g.pad < g.kw) {
    throw DimensionError("conv2d: input " + shape_str(x) + " smaller than kernel " + shape_str(w) +
                         " after padding");
  }
  g.oh = (g.in.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.in.w + 2 * g.pad - g.kw) / g.stride + 1;
  return g;
}

/// Calls fn(oy, iy, ox_lo, ox_hi, ix0) for every output row touched by tap (ky, kx);
/// the input column of output column ox is ix0 + ox*stride.
template <typename Fn>
void for_each_tap_row(const ConvGeometry& g, std::size_t ky, std::size_t kx, Fn&& fn) {
  const auto [ylo, yhi] = ConvGeometry::valid_range(ky, g.pad, g.stride, g.in.h, g.oh);
  const auto [xlo, xhi] = ConvGeometry::valid_range(kx, g.pad, g.stride, g.in.w, g.ow);
  if (xlo >= xhi) return;
  for (std::size_t oy = ylo; oy < yhi; ++oy) {
    const std::size_t iy = oy * g.stride + ky - g.pad;
    const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
    fn(oy, iy, xlo, xhi, ix0);
  }
}

template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, const T* b, T* out) {
  const std::size_t cin_g = g.cin_g(), cout_g = g.cout_g();
  const std::size_t in_plane = g.in.plane(), out_plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.in.n; ++n) {
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      T* o = out + (n * g.cout + oc) * out_plane;
      std::fill(o, o + out_plane, b ? b[oc] : T{0});
      const std::size_t group = oc / cout_g;
      for (std::size_t icg = 0; icg < cin_g; ++icg) {
        const T* in = x + (n * g.in.c + group * cin_g + icg) * in_plane;
        const T* wk = w + (oc * cin_g + icg) * g.kh * g.kw;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T wv = wk[ky * g.kw + kx];
            for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi,
                                            std::ptrdiff_t ix0) {
              T* orow = o + oy * g.ow + lo;
              const T* irow = in + iy * g.in.w + static_cast<std::ptrdiff_t>(lo * g.stride) + ix0;
              const std::size_t count = hi - lo;
              if (g.stride == 1) {
                for (std::size_t i = 0; i < count; ++i) orow[i] += wv * irow[i];
              } else {
                for (std::size_t i = 0; i < count; ++i) orow[i] += wv * irow[i * g.stride];
              }
            });
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* x, const T* w, const T* dout, T* dx, T* dw, T* db) {
  const std::size_t cin_g = g.cin_g(), cout_g = g.cout_g();
  const std::size_t in_plane = g.in.plane(), out_plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.in.n; ++n) {
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      const T* go = dout + (n * g.cout + oc) * out_plane;
      if (db) {
        T s{0};
        for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
        db[oc] += s;
      }
      const std::size_t group = oc / cout_g;
      for (std::size_t icg = 0; icg < cin_g; ++icg) {
        const std::size_t ic = group * cin_g + icg;
        const T* in = x + (n * g.in.c + ic) * in_plane;
        T* gin = dx ? dx + (n * g.in.c + ic) * in_plane : nullptr;
        const std::size_t widx = (oc * cin_g + icg) * g.kh * g.kw;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T wv = w[widx + ky * g.kw + kx];
            T acc{0};
            for_each_tap_row(g, ky, kx, [&](std::size_t oy, std::size_t iy, std::size_t lo, std::size_t hi,
                                            std::ptrdiff_t ix0) {
              const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(lo * g.stride) + ix0;
              const T* grow = go + oy * g.ow + lo;
              const T* irow = in + iy * g.in.w + first;
              T* girow = gin ? gin + iy * g.in.w + first : nullptr;
              const std::size_t count = hi - lo;
              if (g.stride == 1) {
                if (girow) {
                  for (std::size_t i = 0; i < count; ++i) girow[i] += wv * grow[i];
                }
                for (std::size_t i = 0; i < count; ++i) acc += grow[i] * irow[i];
              } else {
                if (girow) {
                  for (std::size_t i = 0; i < count; ++i) girow[i * g.stride] += wv * grow[i];
                }
                for (std::size_t i = 0; i < count; ++i) acc += grow[i] * irow[i * g.stride];
              }
            });
            if (dw) dw[widx + ky * g.kw + kx] += acc;
          }
        }
      }
    }
  }
}

/// How a binary op pairs its operands: equal shapes, or one side a
/// per-channel [1|N, C, 1, 1] vector against a full [N, C, H, W] tensor.
struct Broadcast {
  bool same = true;
  bool a_small = false;  // which operand is the per-channel vector
  Dims4 full;
  std::size_t small_n = 1;

  std::size_t small_index(std::size_t n, std::size_t c) const { return (small_n == 1 ? 0 : n) * full.c + c; }
};

inline bool is_channel_vector(const Shape& s, const Shape& full) {
  return s.size() == 4 && full.size() == 4 && s[1] == full[1] && s[2] == 1 && s[3] == 1 &&
         (s[0] == 1 || s[0] == full[0]);
}

inline Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) return p;
  if (is_channel_vector(b, a)) {
    p.same = false;
    p.a_small = false;
    p.full = Dims4::of(a);
    p.small_n = b[0];
    return p;
  }
  if (is_channel_vector(a, b)) {
    p.same = false;
    p.a_small = true;
    p.full = Dims4::of(b);
    p.small_n = a[0];
    return p;
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
}

/// Applies fn(full_value, small_value) with per-channel broadcasting.
template <typename T, typename Fn>
Tensor<T> broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, const Broadcast& p, Fn&& fn) {
  if (p.same) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    return out;
  }
  const Tensor<T>& full = p.a_small ? b : a;
  const Tensor<T>& small = p.a_small ? a : b;
  Tensor<T> out(full.shape());
  const std::size_t plane = p.full.plane();
  for (std::size_t n = 0; n < p.full.n; ++n) {
    for (std::size_t c = 0; c < p.full.c; ++c) {
      const T s = small[p.small_index(n, c)];
      const std::size_t base = (n * p.full.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[base + i] = p.a_small ? fn(s, full[base + i]) : fn(full[base + i], s);
      }
    }
  }
  return out;
}

/// Sums a full-shape gradient down to the per-channel operand's shape.
template <typename T>
void reduce_to_small(const Tensor<T>& g, const Broadcast& p, Tensor<T>& dst) {
  const std::size_t plane = p.full.plane();
  for (std::size_t n = 0; n < p.full.n; ++n) {
    for (std::size_t c = 0; c < p.full.c; ++c) {
      const std::size_t base = (n * p.full.c + c) * plane;
      T s{0};
      for (std::size_t i = 0; i < plane; ++i) s += g[base + i];
      dst[p.small_index(n, c)] += s;
    }
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

/// Cubic convolution kernel, a = -0.5.
inline double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct ResampleTaps {
  std::size_t width = 4;              // taps per output sample
  std::vector<std::size_t> index;     // out * width
  std::vector<double> weight;         // out * width
};

/// Half-pixel-centre taps for resampling `in` samples onto `out` samples, edge-replicated.
/// Down-sampling widens the kernel by the scale factor and normalises the taps.
inline ResampleTaps resample_taps(std::size_t in, std::size_t out) {
  ResampleTaps taps;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double stretch = std::max(scale, 1.0);
  taps.width = static_cast<std::size_t>(std::ceil(4.0 * stretch)) + (stretch > 1.0 ? 1 : 0);
  taps.index.resize(out * taps.width);
  taps.weight.resize(out * taps.width);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const long long first = static_cast<long long>(std::floor(src - 2.0 * stretch)) + 1;
    double total = 0.0;
    for (std::size_t k = 0; k < taps.width; ++k) {
      const long long pos = first + static_cast<long long>(k);
      const long long clamped = std::clamp<long long>(pos, 0, static_cast<long long>(in) - 1);
      const double w = cubic_weight((src - static_cast<double>(pos)) / stretch);
      taps.index[o * taps.width + k] = static_cast<std::size_t>(clamped);
      taps.weight[o * taps.width + k] = w;
      total += w;
    }
    if (stretch > 1.0)
      for (std::size_t k = 0; k < taps.width; ++k) taps.weight[o * taps.width + k] /= total;
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

/// 2-D cross-correlation with zero padding. `bias` may be an empty Var.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvOptions opt = {}) {
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), weight.shape(), opt);
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().size() != g.cout) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.value().size()) + " entries, expected " +
                         std::to_string(g.cout));
  }
  Tensor<T> out({g.in.n, g.cout, g.oh, g.ow});
  detail::conv_forward(g, x.value().data(), weight.value().data(), has_bias ? bias.value().data() : nullptr,
                       out.data());
  Graph<T>& graph = *x.graph();
  Node<T>* xn = x.node();
  Node<T>* wn = weight.node();
  Node<T>* bn = has_bias ? bias.node() : nullptr;
  auto fn = [g, xn, wn, bn](const Node<T>& self) {
    T* dx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
    T* dw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
    T* db = (bn && bn->requires_grad) ? bn->grad_buffer().data() : nullptr;
    detail::conv_backward(g, xn->value.data(), wn->value.data(), self.grad.data(), dx, dw, db);
  };
  if (has_bias) return graph.record(std::move(out), {&x, &weight, &bias}, fn);
  return graph.record(std::move(out), {&x, &weight}, fn);
}

/// Depth-to-space: [N, C*r*r, H, W] -> [N, C, rH, rW].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& in, std::size_t r) {
  const Dims4 d = Dims4::of(in.shape(), "pixel_shuffle input");
  if (r == 0) throw ParameterError("pixel_shuffle: factor must be positive");
  if (d.c % (r * r) != 0) {
    throw ParameterError("pixel_shuffle: channels " + std::to_string(d.c) + " not divisible by r^2 = " +
                         std::to_string(r * r));
  }
  const std::size_t oc = d.c / (r * r);
  Tensor<T> out({d.n, oc, d.h * r, d.w * r});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < oc; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t x = 0; x < d.w; ++x) out.at(n, c, y * r + i, x * r + j) = in.at(n, c * r * r + i * r + j, y, x);
  return out;
}

/// Space-to-depth, the inverse rearrangement of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& in, std::size_t r) {
  const Dims4 d = Dims4::of(in.shape(), "pixel_unshuffle input");
  if (r == 0 || d.h % r != 0 || d.w % r != 0) {
    throw ParameterError("pixel_unshuffle: extents of " + shape_str(in.shape()) + " not divisible by " +
                         std::to_string(r));
  }
  const std::size_t h = d.h / r, w = d.w / r;
  Tensor<T> out({d.n, d.c * r * r, h, w});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(n, c * r * r + i * r + j, y, x) = in.at(n, c, y * r + i, x * r + j);
  return out;
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
  Tensor<T> out = pixel_shuffle(x.value(), r);
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn, r](const Node<T>& self) {
    const Tensor<T> back = pixel_unshuffle(self.grad, r);
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const Tensor<T>& v = x.value();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > T{0} ? v[i] : T{0};
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xn->value[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const Tensor<T>& v = x.value();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = detail::sigmoid_scalar(v[i]);
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = self.value[i];
      g[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

/// Elementwise clamp; the gradient passes only where lo < x < hi.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out(x.shape());
  const Tensor<T>& v = x.value();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i], lo, hi);
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn, lo, hi](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn->value[i];
      if (v > lo && v < hi) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const Tensor<T>& v = x.value();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]);
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn->value[i];
      if (v > T{0}) g[i] += self.grad[i];
      else if (v < T{0}) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  const Tensor<T>& v = x.value();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * factor;
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn, factor](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const detail::Broadcast p = detail::plan_broadcast(a.shape(), b.shape(), "add");
  Tensor<T> out = detail::broadcast_apply(a.value(), b.value(), p, [](T u, T v) { return u + v; });
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph()->record(std::move(out), {&a, &b}, [an, bn, p](const Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>* in = k == 0 ? an : bn;
      if (!in->requires_grad) continue;
      const bool small = !p.same && ((k == 0) == p.a_small);
      Tensor<T>& g = in->grad_buffer();
      if (small) {
        detail::reduce_to_small(self.grad, p, g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const detail::Broadcast p = detail::plan_broadcast(a.shape(), b.shape(), "sub");
  Tensor<T> out = detail::broadcast_apply(a.value(), b.value(), p, [](T u, T v) { return u - v; });
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph()->record(std::move(out), {&a, &b}, [an, bn, p](const Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>* in = k == 0 ? an : bn;
      if (!in->requires_grad) continue;
      const bool small = !p.same && ((k == 0) == p.a_small);
      const T sign = k == 0 ? T{1} : T{-1};
      Tensor<T>& g = in->grad_buffer();
      if (small) {
        Tensor<T> tmp(g.shape());
        detail::reduce_to_small(self.grad, p, tmp);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * tmp[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const detail::Broadcast p = detail::plan_broadcast(a.shape(), b.shape(), "mul");
  Tensor<T> out = detail::broadcast_apply(a.value(), b.value(), p, [](T u, T v) { return u * v; });
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return a.graph()->record(std::move(out), {&a, &b}, [an, bn, p](const Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>* in = k == 0 ? an : bn;
      if (!in->requires_grad) continue;
      const Node<T>* other = k == 0 ? bn : an;
      Tensor<T>& g = in->grad_buffer();
      const bool small = !p.same && ((k == 0) == p.a_small);
      if (p.same) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other->value[i];
      } else if (small) {
        // d/d(small) = sum over the plane of upstream * full operand
        const Tensor<T>& full = other->value;
        const std::size_t plane = p.full.plane();
        for (std::size_t n = 0; n < p.full.n; ++n) {
          for (std::size_t c = 0; c < p.full.c; ++c) {
            const std::size_t base = (n * p.full.c + c) * plane;
            T s{0};
            for (std::size_t i = 0; i < plane; ++i) s += self.grad[base + i] * full[base + i];
            g[p.small_index(n, c)] += s;
          }
        }
      } else {
        const Tensor<T>& vec = other->value;
        const std::size_t plane = p.full.plane();
        for (std::size_t n = 0; n < p.full.n; ++n) {
          for (std::size_t c = 0; c < p.full.c; ++c) {
            const T s = vec[p.small_index(n, c)];
            const std::size_t base = (n * p.full.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) g[base + i] += self.grad[base + i] * s;
          }
        }
      }
    }
  });
}

/// Sum of all elements as a rank-0 tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
  Tensor<T> out(Shape{});
  out[0] = x.value().sum();
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

/// Concatenates [N, Ci, H, W] tensors along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Dims4 first = Dims4::of(parts.front().shape(), "concat_channels input");
  std::size_t channels = 0;
  for (const Var<T>& p : parts) {
    const Dims4 d = Dims4::of(p.shape(), "concat_channels input");
    if (d.n != first.n || d.h != first.h || d.w != first.w) {
      throw DimensionError("concat_channels: " + shape_str(p.shape()) + " does not match " +
                           shape_str(parts.front().shape()));
    }
    channels += d.c;
  }
  Tensor<T> out({first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  std::vector<Node<T>*> nodes;
  std::vector<std::size_t> widths;
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t offset = 0;
    for (const Var<T>& p : parts) {
      const std::size_t c = p.shape()[1];
      const T* src = p.value().data() + n * c * plane;
      std::copy(src, src + c * plane, out.data() + (n * channels + offset) * plane);
      offset += c;
    }
  }
  for (const Var<T>& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape()[1]);
  }
  return parts.front().graph()->record(std::move(out), parts, [nodes, widths, first, channels](const Node<T>& self) {
    const std::size_t plane = first.plane();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t c = widths[k];
      if (nodes[k]->requires_grad) {
        Tensor<T>& g = nodes[k]->grad_buffer();
        for (std::size_t n = 0; n < first.n; ++n) {
          const T* src = self.grad.data() + (n * channels + offset) * plane;
          T* dst = g.data() + n * c * plane;
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

/// Channels [begin, begin + count) of an [N, C, H, W] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
  const Dims4 d = Dims4::of(x.shape(), "slice_channels input");
  if (begin + count > d.c || count == 0) {
    throw DimensionError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + std::to_string(d.c) + " channels");
  }
  Tensor<T> out({d.n, count, d.h, d.w});
  const std::size_t plane = d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = x.value().data() + (n * d.c + begin) * plane;
    std::copy(src, src + count * plane, out.data() + n * count * plane);
  }
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn, d, begin, count](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    const std::size_t plane = d.plane();
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* src = self.grad.data() + n * count * plane;
      T* dst = g.data() + (n * d.c + begin) * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

/// Edge-replicate padding by `p` pixels on every spatial side.
template <typename T>
Var<T> pad_replicate(const Var<T>& x, std::size_t p) {
  const Dims4 d = Dims4::of(x.shape(), "pad_replicate input");
  const std::size_t oh = d.h + 2 * p, ow = d.w + 2 * p;
  auto src_of = [](std::size_t o, std::size_t p, std::size_t n) {
    return o < p ? 0 : std::min(o - p, n - 1);
  };
  Tensor<T> out({d.n, d.c, oh, ow});
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const T* in = x.value().data() + nc * d.plane();
    T* o = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) o[y * ow + xx] = in[src_of(y, p, d.h) * d.w + src_of(xx, p, d.w)];
  }
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn, d, p, oh, ow, src_of](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
      const T* go = self.grad.data() + nc * oh * ow;
      T* gi = g.data() + nc * d.plane();
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) gi[src_of(y, p, d.h) * d.w + src_of(xx, p, d.w)] += go[y * ow + xx];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  Node<T>* xn = x.node();
  return x.graph()->record(std::move(out), {&x}, [xn](const Node<T>& self) {
    Tensor<T>& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Non-differentiable resampling
// ---------------------------------------------------------------------------

/// Bicubic resize of every (n, c) plane: cubic convolution kernel a = -0.5,
/// half-pixel centres, edge replication. Shrinking an axis antialiases it.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& in, std::size_t out_h, std::size_t out_w) {
  const Dims4 d = Dims4::of(in.shape(), "bicubic_resize input");
  if (out_h == 0 || out_w == 0) throw DimensionError("bicubic_resize: target extents must be positive");
  const detail::ResampleTaps ty = detail::resample_taps(d.h, out_h);
  const detail::ResampleTaps tx = detail::resample_taps(d.w, out_w);
  Tensor<T> out({d.n, d.c, out_h, out_w});
  std::vector<double> rows(out_h * d.w);
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const T* src = in.data() + plane * d.plane();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t x = 0; x < d.w; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ty.width; ++k)
          acc += ty.weight[oy * ty.width + k] * static_cast<double>(src[ty.index[oy * ty.width + k] * d.w + x]);
        rows[oy * d.w + x] = acc;
      }
    }
    T* dst = out.data() + plane * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        for (std::size_t k = 0; k < tx.width; ++k) acc += tx.weight[ox * tx.width + k] * rows[oy * d.w + tx.index[ox * tx.width + k]];
        dst[oy * out_w + ox] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

}  // namespace pdenet
