// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Spike-driven self-attention (SDSA).
//
//   V1:           out = SN(SUM_c(Q_S * K_S)) * V_S
//   V2:           out = Q_S * SN(SUM_c(K_S * V_S))
//   per-channel:  out[:, i] = Q_S[:, i] * SN(<K_S[:, i], V_S[:, i]>)   (H == D)
//
// '*' is the Hadamard product (a mask on binary data), SUM_c sums each
// channel over the token axis and SN is a single-step threshold at u_th.
// Column sums are per channel, so splitting D into heads and concatenating
// gives the same result as operating on the full width; the head loop only
// fixes the evaluation order. No scale and no softmax appear anywhere.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "sdt/lif.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

/// Arithmetic performed by an operator. Masks are free; only additions cost.
struct OpCounter {
  std::uint64_t additions = 0;
  std::uint64_t multiplications = 0;
  std::uint64_t masks = 0;
};

/// Spike-form query, key and value, each [..., N, D].
struct AttentionInputs {
  SpikeTensor q;
  SpikeTensor k;
  SpikeTensor v;
  std::size_t heads = 1;

  std::size_t tokens() const { return q.shape().at(q.shape().size() - 2); }
  std::size_t channels() const { return q.shape().back(); }
  std::size_t groups() const { return q.size() / (tokens() * channels()); }

  void validate() const {
    if (q.shape().size() < 2) throw ShapeError("sdsa: inputs need at least [N, D]");
    if (q.shape() != k.shape() || q.shape() != v.shape())
      throw ShapeError("sdsa: Q/K/V shape mismatch " + shape_str(q.shape()) + ", " +
                       shape_str(k.shape()) + ", " + shape_str(v.shape()));
    if (heads == 0 || channels() % heads != 0)
      throw ShapeError("sdsa: heads must divide the channel count");
  }
};

/// Converts real-valued Q/K/V [T, N, D] to spikes with a temporal LIF layer.
template <typename Real>
AttentionInputs make_attention_inputs(const Tensor<Real>& q, const Tensor<Real>& k,
                                      const Tensor<Real>& v, const LifParams& lif,
                                      std::size_t heads) {
  require_same_shape(q, k, "make_attention_inputs");
  require_same_shape(q, v, "make_attention_inputs");
  AttentionInputs in{SpikeTensor::from(lif_forward(q, lif).spikes),
                     SpikeTensor::from(lif_forward(k, lif).spikes),
                     SpikeTensor::from(lif_forward(v, lif).spikes), heads};
  in.validate();
  return in;
}

namespace kernel {

// Real-valued kernels over [..., N, D] tensors, shared by the binary API
// and the model (which also needs the relaxed mode and a backward pass).

template <typename Real>
struct SdsaCache {
  Tensor<Real> column_sum;  // [..., D]
  Tensor<Real> gate;        // [..., D]
};

inline Shape gate_shape(const Shape& s) {
  Shape g(s.begin(), s.end() - 2);
  g.push_back(s.back());
  return g;
}

template <typename Real>
Real threshold_unit(Real x, Real u_th, double width, SpikeMode mode) {
  if (mode == SpikeMode::Hard) return x - u_th >= Real{0} ? Real{1} : Real{0};
  return static_cast<Real>(surrogate_integral(static_cast<double>(x - u_th), width));
}

/// V1 forward. `q` and `k` form the attention vector which masks `v`.
template <typename Real>
Tensor<Real> sdsa_v1_forward(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                             std::size_t heads, const LifParams& lif,
                             SpikeMode mode = SpikeMode::Hard, SdsaCache<Real>* cache = nullptr,
                             KinkLog* kinks = nullptr, OpCounter* ops = nullptr) {
  require_same_shape(q, k, "sdsa_v1");
  require_same_shape(q, v, "sdsa_v1");
  const std::size_t n_tok = q.dim(q.rank() - 2);
  const std::size_t dim = q.shape().back();
  if (heads == 0 || dim % heads != 0) throw ShapeError("sdsa_v1: heads must divide channels");
  const std::size_t head_dim = dim / heads;
  const std::size_t groups = q.size() / (n_tok * dim);
  const Real u_th = static_cast<Real>(lif.u_th);

  Tensor<Real> out(q.shape());
  Tensor<Real> sums(gate_shape(q.shape()));
  Tensor<Real> gate(gate_shape(q.shape()));
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * n_tok * dim;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t j = 0; j < head_dim; ++j) {
        const std::size_t c = h * head_dim + j;
        Real acc{0};
        for (std::size_t n = 0; n < n_tok; ++n) {
          const Real a = q[base + n * dim + c];
          const Real b = k[base + n * dim + c];
          if (ops) ++ops->masks;
          if (a != Real{0} && b != Real{0}) {
            acc += a * b;
            if (ops) ++ops->additions;
          }
        }
        const Real gv = threshold_unit(acc, u_th, lif.surrogate_width, mode);
        if (kinks) kinks->region(static_cast<double>(acc - u_th), lif.surrogate_width);
        sums[g * dim + c] = acc;
        gate[g * dim + c] = gv;
        for (std::size_t n = 0; n < n_tok; ++n) {
          out[base + n * dim + c] = gv * v[base + n * dim + c];
          if (ops) ++ops->masks;
        }
      }
    }
  }
  if (cache) *cache = SdsaCache<Real>{std::move(sums), std::move(gate)};
  return out;
}

template <typename Real>
struct SdsaGrads {
  Tensor<Real> q, k, v;
};

template <typename Real>
SdsaGrads<Real> sdsa_v1_backward(const Tensor<Real>& grad_out, const Tensor<Real>& q,
                                 const Tensor<Real>& k, const Tensor<Real>& v,
                                 const SdsaCache<Real>& cache, const LifParams& lif) {
  require_same_shape(grad_out, q, "sdsa_v1_backward");
  if (cache.gate.empty()) throw Error("sdsa_v1_backward: missing saved state");
  const std::size_t n_tok = q.dim(q.rank() - 2);
  const std::size_t dim = q.shape().back();
  const std::size_t groups = q.size() / (n_tok * dim);
  const double w = lif.surrogate_width;

  SdsaGrads<Real> g{Tensor<Real>(q.shape()), Tensor<Real>(q.shape()), Tensor<Real>(q.shape())};
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * n_tok * dim;
    for (std::size_t c = 0; c < dim; ++c) {
      const Real gate = cache.gate[gi * dim + c];
      Real grad_gate{0};
      for (std::size_t n = 0; n < n_tok; ++n) {
        const std::size_t i = base + n * dim + c;
        g.v[i] = grad_out[i] * gate;
        grad_gate += grad_out[i] * v[i];
      }
      const double off = static_cast<double>(cache.column_sum[gi * dim + c]) - lif.u_th;
      const Real grad_sum =
          grad_gate * static_cast<Real>(std::abs(off) <= w ? 1.0 / (2.0 * w) : 0.0);
      if (grad_sum == Real{0}) continue;
      for (std::size_t n = 0; n < n_tok; ++n) {
        const std::size_t i = base + n * dim + c;
        g.q[i] = grad_sum * k[i];
        g.k[i] = grad_sum * q[i];
      }
    }
  }
  return g;
}

}  // namespace kernel

/// Attention vector g(Q_S, K_S) = SN(SUM_c(Q_S * K_S)), shape [..., D].
inline SpikeTensor attention_vector_v1(const AttentionInputs& in, const LifParams& lif) {
  in.validate();
  lif.validate();
  kernel::SdsaCache<float> cache;
  kernel::sdsa_v1_forward<float>(in.q.as<float>(), in.k.as<float>(), in.v.as<float>(), in.heads, lif,
                          SpikeMode::Hard, &cache);
  return SpikeTensor::from(cache.gate);
}

inline SpikeTensor sdsa_v1(const AttentionInputs& in, const LifParams& lif,
                           OpCounter* ops = nullptr) {
  in.validate();
  lif.validate();
  // Column sums are small integers, exact in float.
  return SpikeTensor::from(kernel::sdsa_v1_forward<float>(in.q.as<float>(), in.k.as<float>(),
                                                   in.v.as<float>(), in.heads, lif,
                                                   SpikeMode::Hard, nullptr, nullptr, ops));
}

inline SpikeTensor sdsa_v2(const AttentionInputs& in, const LifParams& lif,
                           OpCounter* ops = nullptr) {
  in.validate();
  lif.validate();
  const std::size_t n_tok = in.tokens();
  const std::size_t dim = in.channels();
  const std::size_t head_dim = dim / in.heads;
  SpikeTensor out(in.q.shape());
  for (std::size_t g = 0; g < in.groups(); ++g) {
    const std::size_t base = g * n_tok * dim;
    for (std::size_t h = 0; h < in.heads; ++h) {
      for (std::size_t j = 0; j < head_dim; ++j) {
        const std::size_t c = h * head_dim + j;
        std::uint64_t sum = 0;
        for (std::size_t n = 0; n < n_tok; ++n) {
          if (ops) ++ops->masks;
          if (in.k[base + n * dim + c] && in.v[base + n * dim + c]) {
            ++sum;
            if (ops) ++ops->additions;
          }
        }
        const bool gate = heaviside(static_cast<double>(sum) - lif.u_th) == 1;
        for (std::size_t n = 0; n < n_tok; ++n) {
          if (ops) ++ops->masks;
          out.set(base + n * dim + c, gate && in.q[base + n * dim + c]);
        }
      }
    }
  }
  return out;
}

/// One channel per head: each channel is gated by the thresholded dot
/// product of its key and value columns.
inline SpikeTensor sdsa_per_channel(const AttentionInputs& in, const LifParams& lif) {
  in.validate();
  lif.validate();
  if (in.heads != in.channels())
    throw Error("sdsa_per_channel: requires one channel per head (heads == channels)");
  const std::size_t n_tok = in.tokens();
  const std::size_t dim = in.channels();
  SpikeTensor out(in.q.shape());
  for (std::size_t g = 0; g < in.groups(); ++g) {
    const std::size_t base = g * n_tok * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      double dot = 0.0;
      for (std::size_t n = 0; n < n_tok; ++n)
        dot += static_cast<double>(in.k[base + n * dim + i]) * in.v[base + n * dim + i];
      if (heaviside(dot - lif.u_th) == 0) continue;
      for (std::size_t n = 0; n < n_tok; ++n)
        out.set(base + n * dim + i, in.q[base + n * dim + i] == 1);
    }
  }
  return out;
}

/// Additions performed by the V1 column sum: nonzeros of Q_S * K_S summed
/// over every timestep and head.
inline std::uint64_t sdsa_addition_count(const AttentionInputs& in) {
  in.validate();
  std::uint64_t count = 0;
  for (std::size_t i = 0; i < in.q.size(); ++i) count += (in.q[i] & in.k[i]);
  return count;
}

/// Fraction of output elements on which V1 and V2 agree.
inline double sdsa_agreement(const AttentionInputs& in, const LifParams& lif) {
  const SpikeTensor a = sdsa_v1(in, lif);
  const SpikeTensor b = sdsa_v2(in, lif);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += (a[i] == b[i]);
  return a.size() ? static_cast<double>(same) / static_cast<double>(a.size()) : 1.0;
}

/// softmax(Q K^T * scale) V per head and per leading group. The default
/// scale is 1/sqrt(D/H).
template <typename Real>
Tensor<Real> vsa_reference(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                           std::size_t heads = 1,
                           double scale = std::numeric_limits<double>::quiet_NaN()) {
  require_same_shape(q, k, "vsa_reference");
  require_same_shape(q, v, "vsa_reference");
  if (q.rank() < 2) throw ShapeError("vsa_reference: inputs need at least [N, D]");
  const std::size_t n_tok = q.dim(q.rank() - 2);
  const std::size_t dim = q.shape().back();
  if (heads == 0 || dim % heads != 0) throw ShapeError("vsa_reference: heads must divide D");
  const std::size_t head_dim = dim / heads;
  if (std::isnan(scale)) scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const std::size_t groups = q.size() / (n_tok * dim);

  Tensor<Real> out(q.shape());
  std::vector<double> row(n_tok);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * n_tok * dim;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * head_dim;
      for (std::size_t i = 0; i < n_tok; ++i) {
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n_tok; ++j) {
          double s = 0.0;
          for (std::size_t c = c0; c < c0 + head_dim; ++c)
            s += static_cast<double>(q[base + i * dim + c]) * k[base + j * dim + c];
          row[j] = s * scale;
          peak = std::max(peak, row[j]);
        }
        double z = 0.0;
        for (auto& r : row) z += (r = std::exp(r - peak));
        for (std::size_t c = c0; c < c0 + head_dim; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n_tok; ++j) acc += row[j] * v[base + j * dim + c];
          out[base + i * dim + c] = static_cast<Real>(acc / z);
        }
      }
    }
  }
  return out;
}

}  // namespace sdt
