// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Building blocks for the model. Activations are channels-last: convs see
// [..., H, W, C] and linears see [..., C]. Forward loops scatter from nonzero
// inputs only, so a binary input costs one addition per active element and
// fan-out, which is the event-driven accumulate the energy model prices.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sdt/lif.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;  // allocated on first use

  std::size_t size() const { return value.size(); }
  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<Real>(value.shape());
    else grad.fill(Real{0});
  }
  Real* grad_ptr() {
    if (grad.shape() != value.shape()) grad = Tensor<Real>(value.shape());
    return grad.ptr();
  }
};

template <typename Real>
struct Buffer {
  std::string name;
  Tensor<Real> value;
};

inline void uniform_fill(std::span<float> out, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out) v = static_cast<float>(dist(rng));
}
inline void uniform_fill(std::span<double> out, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out) v = dist(rng);
}

/// 3x3 convolution, stride 1, zero padding 1, no bias. Weight is
/// [3, 3, C_in, C_out].
template <typename Real>
struct Conv3x3 {
  Parameter<Real> weight;

  Conv3x3() = default;
  Conv3x3(std::string name, std::size_t c_in, std::size_t c_out)
      : weight{std::move(name) + ".weight", Tensor<Real>({3, 3, c_in, c_out}), {}} {}

  std::size_t in_channels() const { return weight.value.dim(2); }
  std::size_t out_channels() const { return weight.value.dim(3); }

  void init(std::mt19937_64& rng) {
    uniform_fill(weight.value.data(), 1.0 / std::sqrt(9.0 * in_channels()), rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    const std::size_t r = x.rank();
    if (r < 3 || x.shape()[r - 1] != in_channels())
      throw ShapeError(weight.name + ": expected [..., H, W, " + std::to_string(in_channels()) +
                       "], got " + shape_str(x.shape()));
    const std::size_t h = x.shape()[r - 3], w = x.shape()[r - 2];
    const std::size_t ci_n = in_channels(), co_n = out_channels();
    const std::size_t images = x.size() / (h * w * ci_n);
    Shape out_shape = x.shape();
    out_shape.back() = co_n;
    Tensor<Real> out(out_shape);
    const Real* wt = weight.value.ptr();
    for (std::size_t m = 0; m < images; ++m) {
      for (std::size_t iy = 0; iy < h; ++iy) {
        for (std::size_t ix = 0; ix < w; ++ix) {
          const Real* xp = x.ptr() + ((m * h + iy) * w + ix) * ci_n;
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const Real v = xp[ci];
            if (v == Real{0}) continue;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy) + 1 - static_cast<std::ptrdiff_t>(ky);
              if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix) + 1 - static_cast<std::ptrdiff_t>(kx);
                if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(w)) continue;
                Real* op = out.ptr() + ((m * h + static_cast<std::size_t>(oy)) * w + static_cast<std::size_t>(ox)) * co_n;
                const Real* wp = wt + ((ky * 3 + kx) * ci_n + ci) * co_n;
                if (v == Real{1}) {
                  for (std::size_t co = 0; co < co_n; ++co) op[co] += wp[co];
                } else {
                  for (std::size_t co = 0; co < co_n; ++co) op[co] += v * wp[co];
                }
              }
            }
          }
        }
      }
    }
    return out;
  }

  /// Accumulates the weight gradient; returns dL/dx when requested.
  Tensor<Real> backward(const Tensor<Real>& x, const Tensor<Real>& grad_out, bool need_input_grad) {
    const std::size_t r = x.rank();
    const std::size_t h = x.shape()[r - 3], w = x.shape()[r - 2];
    const std::size_t ci_n = in_channels(), co_n = out_channels();
    const std::size_t images = x.size() / (h * w * ci_n);
    Tensor<Real> grad_in = need_input_grad ? Tensor<Real>(x.shape()) : Tensor<Real>();
    Real* gw = weight.grad_ptr();
    const Real* wt = weight.value.ptr();
    for (std::size_t m = 0; m < images; ++m) {
      for (std::size_t iy = 0; iy < h; ++iy) {
        for (std::size_t ix = 0; ix < w; ++ix) {
          const std::size_t in_off = ((m * h + iy) * w + ix) * ci_n;
          const Real* xp = x.ptr() + in_off;
          for (std::size_t ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy) + 1 - static_cast<std::ptrdiff_t>(ky);
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix) + 1 - static_cast<std::ptrdiff_t>(kx);
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(w)) continue;
              const Real* gp = grad_out.ptr() + ((m * h + static_cast<std::size_t>(oy)) * w + static_cast<std::size_t>(ox)) * co_n;
              for (std::size_t ci = 0; ci < ci_n; ++ci) {
                const std::size_t widx = ((ky * 3 + kx) * ci_n + ci) * co_n;
                if (need_input_grad) {
                  const Real* wp = wt + widx;
                  Real acc{0};
                  for (std::size_t co = 0; co < co_n; ++co) acc += gp[co] * wp[co];
                  grad_in[in_off + ci] += acc;
                }
                const Real v = xp[ci];
                if (v == Real{0}) continue;
                Real* gwp = gw + widx;
                for (std::size_t co = 0; co < co_n; ++co) gwp[co] += v * gp[co];
              }
            }
          }
        }
      }
    }
    return grad_in;
  }
};

/// Token-wise linear map over the last axis. Weight is [in, out].
template <typename Real>
struct Linear {
  Parameter<Real> weight;
  Parameter<Real> bias;  // empty when the layer has no bias

  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, bool with_bias)
      : weight{name + ".weight", Tensor<Real>({in, out}), {}} {
    if (with_bias) bias = Parameter<Real>{name + ".bias", Tensor<Real>({out}), {}};
  }

  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }
  bool has_bias() const { return !bias.value.empty(); }

  void init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
    uniform_fill(weight.value.data(), bound, rng);
    if (has_bias()) uniform_fill(bias.value.data(), bound, rng);
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    const std::size_t in = in_features(), out_n = out_features();
    if (x.rank() < 1 || x.shape().back() != in)
      throw ShapeError(weight.name + ": expected [..., " + std::to_string(in) + "], got " +
                       shape_str(x.shape()));
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out_n;
    Tensor<Real> out(out_shape);
    const Real* wt = weight.value.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      Real* op = out.ptr() + r * out_n;
      if (has_bias())
        for (std::size_t o = 0; o < out_n; ++o) op[o] = bias.value[o];
      const Real* xp = x.ptr() + r * in;
      for (std::size_t i = 0; i < in; ++i) {
        const Real v = xp[i];
        if (v == Real{0}) continue;
        const Real* wp = wt + i * out_n;
        if (v == Real{1}) {
          for (std::size_t o = 0; o < out_n; ++o) op[o] += wp[o];
        } else {
          for (std::size_t o = 0; o < out_n; ++o) op[o] += v * wp[o];
        }
      }
    }
    return out;
  }

  Tensor<Real> backward(const Tensor<Real>& x, const Tensor<Real>& grad_out, bool need_input_grad) {
    const std::size_t in = in_features(), out_n = out_features();
    const std::size_t rows = x.size() / in;
    Tensor<Real> grad_in = need_input_grad ? Tensor<Real>(x.shape()) : Tensor<Real>();
    Real* gw = weight.grad_ptr();
    Real* gb = has_bias() ? bias.grad_ptr() : nullptr;
    const Real* wt = weight.value.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* gp = grad_out.ptr() + r * out_n;
      const Real* xp = x.ptr() + r * in;
      if (gb)
        for (std::size_t o = 0; o < out_n; ++o) gb[o] += gp[o];
      for (std::size_t i = 0; i < in; ++i) {
        const Real* wp = wt + i * out_n;
        if (need_input_grad) {
          Real acc{0};
          for (std::size_t o = 0; o < out_n; ++o) acc += gp[o] * wp[o];
          grad_in[r * in + i] = acc;
        }
        const Real v = xp[i];
        if (v == Real{0}) continue;
        Real* gwp = gw + i * out_n;
        for (std::size_t o = 0; o < out_n; ++o) gwp[o] += v * gp[o];
      }
    }
    return grad_in;
  }
};

enum class Phase { Train, Eval };

template <typename Real>
struct BatchNormCache {
  Tensor<Real> normalized;     // x-hat
  std::vector<Real> inv_std;   // per channel
  std::vector<Real> batch_mean;
  std::vector<Real> batch_var;  // biased
  std::size_t rows = 0;
  Phase phase = Phase::Eval;
};

/// Per-channel normalization over every leading axis (batch, time, space).
/// Training uses batch statistics; evaluation uses the running estimates,
/// which reduces to a per-channel scale and shift.
template <typename Real>
struct BatchNorm {
  Parameter<Real> gamma;
  Parameter<Real> beta;
  Buffer<Real> running_mean;
  Buffer<Real> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels)
      : gamma{name + ".weight", Tensor<Real>({channels}, Real{1}), {}},
        beta{name + ".bias", Tensor<Real>({channels}), {}},
        running_mean{name + ".running_mean", Tensor<Real>({channels})},
        running_var{name + ".running_var", Tensor<Real>({channels}, Real{1})} {}

  std::size_t channels() const { return gamma.value.size(); }

  Tensor<Real> forward(const Tensor<Real>& x, Phase phase, BatchNormCache<Real>* cache) const {
    const std::size_t c_n = channels();
    if (x.rank() < 1 || x.shape().back() != c_n)
      throw ShapeError(gamma.name + ": expected [..., " + std::to_string(c_n) + "], got " +
                       shape_str(x.shape()));
    const std::size_t rows = x.size() / c_n;
    std::vector<Real> mean(c_n), var(c_n), inv(c_n);
    if (phase == Phase::Train) {
      std::vector<double> s(c_n, 0.0), ss(c_n, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < c_n; ++c) s[c] += static_cast<double>(x[r * c_n + c]);
      for (std::size_t c = 0; c < c_n; ++c) s[c] /= static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < c_n; ++c) {
          const double d = static_cast<double>(x[r * c_n + c]) - s[c];
          ss[c] += d * d;
        }
      for (std::size_t c = 0; c < c_n; ++c) {
        mean[c] = static_cast<Real>(s[c]);
        var[c] = static_cast<Real>(ss[c] / static_cast<double>(rows));
      }
    } else {
      for (std::size_t c = 0; c < c_n; ++c) {
        mean[c] = running_mean.value[c];
        var[c] = running_var.value[c];
      }
    }
    for (std::size_t c = 0; c < c_n; ++c)
      inv[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(var[c]) + eps));

    Tensor<Real> out(x.shape());
    Tensor<Real> xhat = cache ? Tensor<Real>(x.shape()) : Tensor<Real>();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const std::size_t i = r * c_n + c;
        const Real n = (x[i] - mean[c]) * inv[c];
        if (cache) xhat[i] = n;
        out[i] = gamma.value[c] * n + beta.value[c];
      }
    }
    if (cache) *cache = BatchNormCache<Real>{std::move(xhat), std::move(inv), std::move(mean),
                                             std::move(var), rows, phase};
    return out;
  }

  void update_running(const BatchNormCache<Real>& cache) {
    if (cache.phase != Phase::Train) return;
    const double unbias = cache.rows > 1 ? static_cast<double>(cache.rows) / (cache.rows - 1) : 1.0;
    for (std::size_t c = 0; c < channels(); ++c) {
      running_mean.value[c] = static_cast<Real>((1.0 - momentum) * running_mean.value[c] +
                                                momentum * cache.batch_mean[c]);
      running_var.value[c] = static_cast<Real>((1.0 - momentum) * running_var.value[c] +
                                               momentum * cache.batch_var[c] * unbias);
    }
  }

  Tensor<Real> backward(const Tensor<Real>& grad_out, const BatchNormCache<Real>& cache) {
    const std::size_t c_n = channels();
    const std::size_t rows = cache.rows;
    Real* gg = gamma.grad_ptr();
    Real* gb = beta.grad_ptr();
    std::vector<double> sum_g(c_n, 0.0), sum_gx(c_n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < c_n; ++c) {
        const std::size_t i = r * c_n + c;
        sum_g[c] += static_cast<double>(grad_out[i]);
        sum_gx[c] += static_cast<double>(grad_out[i]) * cache.normalized[i];
      }
    for (std::size_t c = 0; c < c_n; ++c) {
      gg[c] += static_cast<Real>(sum_gx[c]);
      gb[c] += static_cast<Real>(sum_g[c]);
    }
    Tensor<Real> grad_in(grad_out.shape());
    const double inv_rows = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < c_n; ++c) {
        const std::size_t i = r * c_n + c;
        const double scale = static_cast<double>(gamma.value[c]) * cache.inv_std[c];
        if (cache.phase == Phase::Train) {
          grad_in[i] = static_cast<Real>(
              scale * (grad_out[i] - inv_rows * sum_g[c] -
                       cache.normalized[i] * inv_rows * sum_gx[c]));
        } else {
          grad_in[i] = static_cast<Real>(scale * grad_out[i]);
        }
      }
    return grad_in;
  }
};

struct PoolCache {
  std::vector<std::uint8_t> argmax;  // 0..3 within each 2x2 window
  Shape input_shape;
};

/// 2x2 max pooling with stride 2 over [..., H, W, C]. Ties go to the first
/// position in row-major window order.
template <typename Real>
Tensor<Real> max_pool2x2(const Tensor<Real>& x, PoolCache* cache, KinkLog* kinks = nullptr) {
  const std::size_t r = x.rank();
  if (r < 3) throw ShapeError("max_pool2x2: expected [..., H, W, C]");
  const std::size_t h = x.shape()[r - 3], w = x.shape()[r - 2], c_n = x.shape()[r - 1];
  if (h % 2 || w % 2) throw ShapeError("max_pool2x2: spatial size must be even");
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t images = x.size() / (h * w * c_n);
  Shape out_shape = x.shape();
  out_shape[r - 3] = oh;
  out_shape[r - 2] = ow;
  Tensor<Real> out(out_shape);
  std::vector<std::uint8_t> arg(out.size());
  for (std::size_t m = 0; m < images; ++m)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t c = 0; c < c_n; ++c) {
          Real best{};
          std::uint8_t best_k = 0;
          for (std::uint8_t k = 0; k < 4; ++k) {
            const std::size_t iy = 2 * oy + k / 2, ix = 2 * ox + k % 2;
            const Real v = x[((m * h + iy) * w + ix) * c_n + c];
            if (k == 0 || v > best) {
              best = v;
              best_k = k;
            }
          }
          const std::size_t o = ((m * oh + oy) * ow + ox) * c_n + c;
          out[o] = best;
          arg[o] = best_k;
          if (kinks) kinks->push(best_k);
        }
  if (cache) *cache = PoolCache{std::move(arg), x.shape()};
  return out;
}

template <typename Real>
Tensor<Real> max_pool2x2_backward(const Tensor<Real>& grad_out, const PoolCache& cache) {
  const Shape& in_shape = cache.input_shape;
  const std::size_t r = in_shape.size();
  const std::size_t h = in_shape[r - 3], w = in_shape[r - 2], c_n = in_shape[r - 1];
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t images = shape_size(in_shape) / (h * w * c_n);
  Tensor<Real> grad_in(in_shape);
  for (std::size_t m = 0; m < images; ++m)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t c = 0; c < c_n; ++c) {
          const std::size_t o = ((m * oh + oy) * ow + ox) * c_n + c;
          const std::uint8_t k = cache.argmax[o];
          const std::size_t iy = 2 * oy + k / 2, ix = 2 * ox + k % 2;
          grad_in[((m * h + iy) * w + ix) * c_n + c] += grad_out[o];
        }
  return grad_in;
}

}  // namespace sdt
