// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Spike-driven Transformer assembly.
//
//   SPS:     u = PSM(I); s = SN(u); U0 = u + BN(Conv(s))
//   block l: S = SN(U);  U' = SDSA(S) + U;  S' = SN(U');  U_next = MLP(S') + U'
//   head:    logits = mean_t CH(GAP(SN(U_L)))
//
// Every residual adds two membrane tensors and every linear/conv after the
// first SPS conv sees binary spikes. The head applies its weights token by
// token to the binary spikes and averages afterwards, which equals
// CH(GAP(.)) because both maps are linear.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "sdt/layers.hpp"
#include "sdt/lif.hpp"
#include "sdt/sdsa.hpp"
#include "sdt/tensor.hpp"

namespace sdt {

struct ModelConfig {
  std::size_t timesteps = 4;
  std::size_t blocks = 8;
  std::size_t channels = 512;
  std::size_t heads = 8;
  double mlp_ratio = 4.0;
  std::size_t in_channels = 3;
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t num_classes = 1000;
  std::array<std::size_t, 4> sps_channels{64, 128, 256, 512};
  LifParams lif;

  /// Spiking Transformer-L-D with the default SPS progression [D/8, D/4, D/2, D].
  static ModelConfig standard(std::size_t blocks, std::size_t channels, std::size_t heads = 8) {
    ModelConfig c;
    c.blocks = blocks;
    c.channels = channels;
    c.heads = heads;
    c.sps_channels = default_sps_channels(channels);
    return c;
  }

  static std::array<std::size_t, 4> default_sps_channels(std::size_t d) {
    return {std::max<std::size_t>(d / 8, 1), std::max<std::size_t>(d / 4, 1),
            std::max<std::size_t>(d / 2, 1), d};
  }

  std::size_t hidden() const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(channels)));
  }
  std::size_t grid_height() const { return height / 16; }
  std::size_t grid_width() const { return width / 16; }
  std::size_t tokens() const { return grid_height() * grid_width(); }

  void validate() const {
    if (timesteps == 0) throw Error("model: timesteps must be positive");
    if (channels == 0 || heads == 0) throw Error("model: channels and heads must be positive");
    if (channels % heads != 0) throw Error("model: heads must divide channels");
    if (height == 0 || width == 0 || height % 16 || width % 16)
      throw Error("model: height and width must be positive multiples of 16");
    if (!(mlp_ratio > 0.0) || hidden() == 0) throw Error("model: mlp_ratio must be positive");
    if (in_channels == 0 || num_classes == 0)
      throw Error("model: in_channels and num_classes must be positive");
    for (auto c : sps_channels)
      if (c == 0) throw Error("model: sps_channels must be positive");
    if (sps_channels[3] != channels)
      throw Error("model: last sps_channels entry must equal channels");
    lif.validate();
  }

  /// Scalar fields in declared order (the checkpoint "__config" record).
  std::vector<double> scalars() const {
    return {static_cast<double>(timesteps), static_cast<double>(blocks),
            static_cast<double>(channels),  static_cast<double>(heads),
            mlp_ratio,                      static_cast<double>(in_channels),
            static_cast<double>(height),    static_cast<double>(width),
            static_cast<double>(num_classes), static_cast<double>(sps_channels[0]),
            static_cast<double>(sps_channels[1]), static_cast<double>(sps_channels[2]),
            static_cast<double>(sps_channels[3]), lif.u_th,
            lif.beta,                       lif.v_reset,
            lif.surrogate_width};
  }

  static ModelConfig from_scalars(std::span<const double> v) {
    if (v.size() != 17) throw Error("model config record must hold 17 values");
    auto count = [](double x) { return static_cast<std::size_t>(std::llround(x)); };
    ModelConfig c;
    c.timesteps = count(v[0]);
    c.blocks = count(v[1]);
    c.channels = count(v[2]);
    c.heads = count(v[3]);
    c.mlp_ratio = v[4];
    c.in_channels = count(v[5]);
    c.height = count(v[6]);
    c.width = count(v[7]);
    c.num_classes = count(v[8]);
    for (std::size_t i = 0; i < 4; ++i) c.sps_channels[i] = count(v[9 + i]);
    c.lif = LifParams{v[13], v[14], v[15], v[16]};
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename Real>
struct SpsStage {
  Conv3x3<Real> conv;
  BatchNorm<Real> bn;
};

template <typename Real>
struct EncoderBlock {
  Linear<Real> q, k, v, proj;
  BatchNorm<Real> q_bn, k_bn, v_bn, proj_bn;
  Linear<Real> fc1, fc2;
  BatchNorm<Real> fc1_bn, fc2_bn;
};

template <typename Real>
struct Model {
  ModelConfig config;
  std::array<SpsStage<Real>, 4> sps;
  Conv3x3<Real> rpe;
  BatchNorm<Real> rpe_bn;
  std::vector<EncoderBlock<Real>> blocks;
  Linear<Real> head;

  explicit Model(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    std::size_t c_in = cfg.in_channels;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string n = std::to_string(i + 1);
      sps[i] = {Conv3x3<Real>("sps.conv" + n, c_in, cfg.sps_channels[i]),
                BatchNorm<Real>("sps.bn" + n, cfg.sps_channels[i])};
      c_in = cfg.sps_channels[i];
    }
    const std::size_t d = cfg.channels, hid = cfg.hidden();
    rpe = Conv3x3<Real>("sps.rpe", d, d);
    rpe_bn = BatchNorm<Real>("sps.rpe_bn", d);
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
      const std::string p = "block" + std::to_string(l + 1) + ".";
      EncoderBlock<Real> b;
      b.q = Linear<Real>(p + "q", d, d, false);
      b.k = Linear<Real>(p + "k", d, d, false);
      b.v = Linear<Real>(p + "v", d, d, false);
      b.proj = Linear<Real>(p + "proj", d, d, false);
      b.q_bn = BatchNorm<Real>(p + "q_bn", d);
      b.k_bn = BatchNorm<Real>(p + "k_bn", d);
      b.v_bn = BatchNorm<Real>(p + "v_bn", d);
      b.proj_bn = BatchNorm<Real>(p + "proj_bn", d);
      b.fc1 = Linear<Real>(p + "fc1", d, hid, false);
      b.fc1_bn = BatchNorm<Real>(p + "fc1_bn", hid);
      b.fc2 = Linear<Real>(p + "fc2", hid, d, false);
      b.fc2_bn = BatchNorm<Real>(p + "fc2_bn", d);
      blocks.push_back(std::move(b));
    }
    head = Linear<Real>("head", d, cfg.num_classes, true);
  }

  template <typename Self, typename F>
  static void visit_parameters(Self& self, F&& f) {
    auto bn = [&](auto& b) {
      f(b.gamma);
      f(b.beta);
    };
    for (auto& s : self.sps) {
      f(s.conv.weight);
      bn(s.bn);
    }
    f(self.rpe.weight);
    bn(self.rpe_bn);
    for (auto& b : self.blocks) {
      f(b.q.weight);
      bn(b.q_bn);
      f(b.k.weight);
      bn(b.k_bn);
      f(b.v.weight);
      bn(b.v_bn);
      f(b.proj.weight);
      bn(b.proj_bn);
      f(b.fc1.weight);
      bn(b.fc1_bn);
      f(b.fc2.weight);
      bn(b.fc2_bn);
    }
    f(self.head.weight);
    f(self.head.bias);
  }

  template <typename Self, typename F>
  static void visit_batchnorms(Self& self, F&& f) {
    for (auto& s : self.sps) f(s.bn);
    f(self.rpe_bn);
    for (auto& b : self.blocks) {
      f(b.q_bn);
      f(b.k_bn);
      f(b.v_bn);
      f(b.proj_bn);
      f(b.fc1_bn);
      f(b.fc2_bn);
    }
  }

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    visit_parameters(*this, [&](Parameter<Real>& p) { out.push_back(&p); });
    return out;
  }
  std::vector<const Parameter<Real>*> parameters() const {
    std::vector<const Parameter<Real>*> out;
    visit_parameters(*this, [&](const Parameter<Real>& p) { out.push_back(&p); });
    return out;
  }
  std::vector<Buffer<Real>*> buffers() {
    std::vector<Buffer<Real>*> out;
    visit_batchnorms(*this, [&](BatchNorm<Real>& b) {
      out.push_back(&b.running_mean);
      out.push_back(&b.running_var);
    });
    return out;
  }
  std::vector<const Buffer<Real>*> buffers() const {
    std::vector<const Buffer<Real>*> out;
    visit_batchnorms(*this, [&](const BatchNorm<Real>& b) {
      out.push_back(&b.running_mean);
      out.push_back(&b.running_var);
    });
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
};

/// Builds a model with weights drawn deterministically from `seed`.
/// Normalization layers start at identity (scale 1, shift 0).
template <typename Real = float>
Model<Real> build_model(const ModelConfig& config, std::uint64_t seed) {
  Model<Real> m(config);
  std::mt19937_64 rng(seed);
  for (auto& s : m.sps) s.conv.init(rng);
  m.rpe.init(rng);
  for (auto& b : m.blocks) {
    b.q.init(rng);
    b.k.init(rng);
    b.v.init(rng);
    b.proj.init(rng);
    b.fc1.init(rng);
    b.fc2.init(rng);
  }
  m.head.init(rng);
  return m;
}

template <typename Real>
std::size_t count_params(const Model<Real>& model) {
  std::size_t n = 0;
  for (const auto* p : model.parameters()) n += p->size();
  return n;
}

/// Learnable scalars per module, computed from the configuration alone.
inline std::vector<std::pair<std::string, std::size_t>> param_breakdown(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t c_in = c.in_channels;
  for (std::size_t i = 0; i < 4; ++i) {
    out.emplace_back("sps.stage" + std::to_string(i + 1),
                     9 * c_in * c.sps_channels[i] + 2 * c.sps_channels[i]);
    c_in = c.sps_channels[i];
  }
  const std::size_t d = c.channels, hid = c.hidden();
  out.emplace_back("sps.rpe", 9 * d * d + 2 * d);
  for (std::size_t l = 0; l < c.blocks; ++l) {
    const std::string p = "block" + std::to_string(l + 1);
    out.emplace_back(p + ".sdsa", 4 * (d * d + 2 * d));
    out.emplace_back(p + ".mlp", d * hid + 2 * hid + hid * d + 2 * d);
  }
  out.emplace_back("head", d * c.num_classes + c.num_classes);
  return out;
}

inline std::size_t count_params(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& [name, count] : param_breakdown(c)) n += count;
  return n;
}

// ---------------------------------------------------------------------------
// Forward pass

enum class Signal { Membrane, Spike };
enum class Shortcut { Membrane, Spike };

/// Hooks invoked during a forward pass. Tensors carry the time axis first.
template <typename Real>
class ForwardObserver {
 public:
  virtual ~ForwardObserver() = default;
  /// Input of a linear or conv operator, named like "block1.q".
  virtual void operator_input(const std::string& op, const Tensor<Real>& x) {
    (void)op;
    (void)x;
  }
  /// A spike tensor at a named firing-rate site, e.g. "block1.sdsa.q_s".
  virtual void spikes(const std::string& site, const Tensor<Real>& s) {
    (void)site;
    (void)s;
  }
  virtual void residual_add(const std::string& where, Signal lhs, Signal rhs) {
    (void)where;
    (void)lhs;
    (void)rhs;
  }
};

template <typename Real>
struct ForwardOptions {
  Phase phase = Phase::Eval;
  SpikeMode mode = SpikeMode::Hard;
  Shortcut shortcut = Shortcut::Membrane;
  ForwardObserver<Real>* observer = nullptr;
  KinkLog* kinks = nullptr;
  bool check_finite = false;
};

template <typename Real>
struct SpsCache {
  std::array<Tensor<Real>, 4> conv_in;
  std::array<BatchNormCache<Real>, 4> bn;
  std::array<Tensor<Real>, 3> stage_u;
  std::array<PoolCache, 4> pool;
  Tensor<Real> s_u;
  Tensor<Real> rpe_in;
  BatchNormCache<Real> rpe_bn;
  Shape grid_shape;
};

template <typename Real>
struct BlockCache {
  Tensor<Real> in_u, s;
  BatchNormCache<Real> q_bn, k_bn, v_bn, proj_bn, fc1_bn, fc2_bn;
  Tensor<Real> q_u, k_u, v_u, q_s, k_s, v_s;
  kernel::SdsaCache<Real> sdsa;
  Tensor<Real> attn;
  Tensor<Real> mid_lif_u, mid_s;
  Tensor<Real> hid_u, hid_s;
};

template <typename Real>
struct HeadCache {
  Tensor<Real> final_u, final_s;
};

template <typename Real>
struct ForwardCache {
  SpsCache<Real> sps;
  std::vector<BlockCache<Real>> blocks;
  HeadCache<Real> head;
};

namespace detail {

template <typename Real>
void check(const ForwardOptions<Real>& o, const Tensor<Real>& t, const std::string& layer) {
  if (o.check_finite && !all_finite(t)) throw NumericError("non-finite values in layer " + layer);
}

template <typename Real>
Tensor<Real> spike(const Tensor<Real>& x, const LifParams& lif, const ForwardOptions<Real>& o,
                   std::type_identity_t<Tensor<Real>>* membrane) {
  auto r = lif_forward(x, lif, o.mode, o.kinks);
  if (membrane) *membrane = std::move(r.membrane);
  return std::move(r.spikes);
}

template <typename Real>
Tensor<Real> linear_bn(const Linear<Real>& lin, const BatchNorm<Real>& bn, const Tensor<Real>& x,
                       const ForwardOptions<Real>& o,
                       std::type_identity_t<BatchNormCache<Real>>* cache) {
  const std::string op = lin.weight.name.substr(0, lin.weight.name.size() - 7);
  if (o.observer) o.observer->operator_input(op, x);
  Tensor<Real> y = bn.forward(lin.forward(x), o.phase, cache);
  check(o, y, op);
  return y;
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "residual add");
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename Real>
void add_into(Tensor<Real>& a, const Tensor<Real>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace detail

/// Accepts [T, C, H, W] (one sample, channels first) or [T, B, H, W, C]
/// (batch, channels last) and returns the batch layout.
template <typename Real>
Tensor<Real> to_batch_layout(const Tensor<Real>& images, const ModelConfig& c) {
  if (images.rank() == 5) {
    const Shape& s = images.shape();
    if (s[0] != c.timesteps || s[2] != c.height || s[3] != c.width || s[4] != c.in_channels)
      throw ShapeError("images " + shape_str(s) + " do not match the model geometry");
    return images;
  }
  if (images.rank() != 4) throw ShapeError("images must be [T, C, H, W] or [T, B, H, W, C]");
  const Shape& s = images.shape();
  if (s[0] != c.timesteps || s[1] != c.in_channels || s[2] != c.height || s[3] != c.width)
    throw ShapeError("images " + shape_str(s) + " do not match the model geometry");
  Tensor<Real> out({s[0], 1, s[2], s[3], s[1]});
  for (std::size_t t = 0; t < s[0]; ++t)
    for (std::size_t ch = 0; ch < s[1]; ++ch)
      for (std::size_t y = 0; y < s[2]; ++y)
        for (std::size_t x = 0; x < s[3]; ++x)
          out[((t * s[2] + y) * s[3] + x) * s[1] + ch] = images[((t * s[1] + ch) * s[2] + y) * s[3] + x];
  return out;
}

/// Spiking patch splitting. Stages 1-3 run conv, BN, LIF and 2x2 max-pool;
/// stage 4 runs conv, BN and max-pool and yields the membrane u. Then
/// s = SN(u) and U0 = u + BN(Conv(s)). Returns U0 as [T, (B,) N, D].
template <typename Real>
Tensor<Real> sps_forward(const Model<Real>& model, const Tensor<Real>& images,
                         const ForwardOptions<Real>& o = {}, SpsCache<Real>* cache = nullptr) {
  const ModelConfig& c = model.config;
  const bool single = images.rank() == 4;
  Tensor<Real> x = to_batch_layout(images, c);
  require_finite(x, "sps input");
  const auto& lif = c.lif;

  for (std::size_t i = 0; i < 4; ++i) {
    const std::string n = std::to_string(i + 1);
    if (o.observer) o.observer->operator_input("sps.conv" + n, x);
    Tensor<Real> y = model.sps[i].bn.forward(model.sps[i].conv.forward(x), o.phase,
                                             cache ? &cache->bn[i] : nullptr);
    detail::check(o, y, "sps.conv" + n);
    if (cache) cache->conv_in[i] = std::move(x);
    if (i < 3) {
      Tensor<Real> s = detail::spike(y, lif, o, cache ? &cache->stage_u[i] : nullptr);
      x = max_pool2x2(s, cache ? &cache->pool[i] : nullptr, o.kinks);
      if (o.observer) o.observer->spikes("sps.conv" + n, x);
    } else {
      x = max_pool2x2(y, cache ? &cache->pool[i] : nullptr, o.kinks);
    }
  }
  Tensor<Real> u = std::move(x);  // [T, B, h, w, D]
  Tensor<Real> s = detail::spike(u, lif, o, cache ? &cache->s_u : nullptr);
  if (o.observer) {
    o.observer->spikes("sps.conv4", s);
    o.observer->operator_input("sps.rpe", s);
  }
  Tensor<Real> rpe = model.rpe_bn.forward(model.rpe.forward(s), o.phase,
                                          cache ? &cache->rpe_bn : nullptr);
  detail::check(o, rpe, "sps.rpe");
  if (o.observer) o.observer->residual_add("sps.rpe", Signal::Membrane, Signal::Membrane);
  Tensor<Real> u0 = detail::add(u, rpe);
  if (cache) {
    cache->grid_shape = u.shape();
    cache->rpe_in = std::move(s);
  }
  const Shape& g = u0.shape();
  if (single) return std::move(u0).reshaped({g[0], g[2] * g[3], g[4]});
  return std::move(u0).reshaped({g[0], g[1], g[2] * g[3], g[4]});
}

/// One encoder block on membrane input [T, (B,) N, D]; returns the membrane
/// MLP(S') + U'.
template <typename Real>
Tensor<Real> encoder_block_forward(const Model<Real>& model, std::size_t index,
                                   const Tensor<Real>& u_in, const ForwardOptions<Real>& o = {},
                                   BlockCache<Real>* cache = nullptr) {
  const ModelConfig& c = model.config;
  if (index >= model.blocks.size()) throw Error("encoder block index out of range");
  if (u_in.rank() < 3 || u_in.dim(0) != c.timesteps || u_in.shape().back() != c.channels)
    throw ShapeError("encoder block input " + shape_str(u_in.shape()) + " does not match model");
  require_finite(u_in, "encoder block input");
  const auto& b = model.blocks[index];
  const auto& lif = c.lif;
  const std::string p = "block" + std::to_string(index + 1);
  auto* obs = o.observer;

  Tensor<Real> s = detail::spike(u_in, lif, o, cache ? &cache->in_u : nullptr);
  if (obs) obs->spikes(p + ".sdsa.input", s);

  BatchNormCache<Real>* qc = cache ? &cache->q_bn : nullptr;
  BatchNormCache<Real>* kc = cache ? &cache->k_bn : nullptr;
  BatchNormCache<Real>* vc = cache ? &cache->v_bn : nullptr;
  Tensor<Real> q_s = detail::spike(detail::linear_bn(b.q, b.q_bn, s, o, qc), lif, o,
                                   cache ? &cache->q_u : nullptr);
  Tensor<Real> k_s = detail::spike(detail::linear_bn(b.k, b.k_bn, s, o, kc), lif, o,
                                   cache ? &cache->k_u : nullptr);
  Tensor<Real> v_s = detail::spike(detail::linear_bn(b.v, b.v_bn, s, o, vc), lif, o,
                                   cache ? &cache->v_u : nullptr);
  if (obs) {
    obs->spikes(p + ".sdsa.v_s", v_s);
    obs->spikes(p + ".sdsa.q_s", q_s);
    obs->spikes(p + ".sdsa.k_s", k_s);
  }
  kernel::SdsaCache<Real> sc;
  Tensor<Real> attn = kernel::sdsa_v1_forward(q_s, k_s, v_s, c.heads, lif, o.mode, &sc, o.kinks);
  if (obs) {
    obs->spikes(p + ".sdsa.g", sc.gate);
    obs->spikes(p + ".sdsa.output", attn);
  }
  Tensor<Real> proj = detail::linear_bn(b.proj, b.proj_bn, attn, o, cache ? &cache->proj_bn : nullptr);

  if (o.shortcut == Shortcut::Spike) {
    // Spike-element-wise shortcut: residuals join spike tensors, so the MLP
    // receives integer-valued activations. Forward only; kept as a negative
    // control for the spike-driven certifier.
    Tensor<Real> a_s = detail::spike(proj, lif, o, nullptr);
    if (obs) obs->residual_add(p + ".sdsa", Signal::Spike, Signal::Spike);
    Tensor<Real> x1 = detail::add(s, a_s);
    if (obs) obs->spikes(p + ".mlp.layer1", x1);
    Tensor<Real> h_s = detail::spike(detail::linear_bn(b.fc1, b.fc1_bn, x1, o, nullptr), lif, o, nullptr);
    if (obs) obs->spikes(p + ".mlp.layer2", h_s);
    Tensor<Real> m_s = detail::spike(detail::linear_bn(b.fc2, b.fc2_bn, h_s, o, nullptr), lif, o, nullptr);
    if (obs) obs->residual_add(p + ".mlp", Signal::Spike, Signal::Spike);
    return detail::add(x1, m_s);
  }

  if (obs) obs->residual_add(p + ".sdsa", Signal::Membrane, Signal::Membrane);
  Tensor<Real> mid_u = detail::add(proj, u_in);
  Tensor<Real> mid_s = detail::spike(mid_u, lif, o, cache ? &cache->mid_lif_u : nullptr);
  if (obs) obs->spikes(p + ".mlp.layer1", mid_s);
  Tensor<Real> hid_s = detail::spike(
      detail::linear_bn(b.fc1, b.fc1_bn, mid_s, o, cache ? &cache->fc1_bn : nullptr), lif, o,
      cache ? &cache->hid_u : nullptr);
  if (obs) obs->spikes(p + ".mlp.layer2", hid_s);
  Tensor<Real> mlp = detail::linear_bn(b.fc2, b.fc2_bn, hid_s, o, cache ? &cache->fc2_bn : nullptr);
  if (obs) obs->residual_add(p + ".mlp", Signal::Membrane, Signal::Membrane);
  Tensor<Real> out = detail::add(mlp, mid_u);

  if (cache) {
    cache->s = std::move(s);
    cache->q_s = std::move(q_s);
    cache->k_s = std::move(k_s);
    cache->v_s = std::move(v_s);
    cache->sdsa = std::move(sc);
    cache->attn = std::move(attn);
    cache->mid_s = std::move(mid_s);
    cache->hid_s = std::move(hid_s);
  }
  return out;
}

/// Final spikes to logits. `u` is [T, (B,) N, D]; logits are [(B,) classes].
template <typename Real>
Tensor<Real> head_forward(const Model<Real>& model, const Tensor<Real>& u,
                          const ForwardOptions<Real>& o = {}, HeadCache<Real>* cache = nullptr) {
  const ModelConfig& c = model.config;
  Tensor<Real> s = detail::spike(u, c.lif, o, cache ? &cache->final_u : nullptr);
  if (o.observer) {
    o.observer->spikes("head.fc", s);
    o.observer->operator_input("head.fc", s);
  }
  const std::size_t steps = s.dim(0), n_tok = s.dim(s.rank() - 2), d = s.shape().back();
  const std::size_t batch = s.size() / (steps * n_tok * d);
  const std::size_t classes = c.num_classes;
  const Real* w = model.head.weight.value.ptr();
  Shape out_shape = s.rank() == 3 ? Shape{classes} : Shape{batch, classes};
  Tensor<Real> logits(out_shape);
  std::vector<Real> acc(classes);
  const Real norm = Real{1} / static_cast<Real>(steps * n_tok);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::fill(acc.begin(), acc.end(), Real{0});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t n = 0; n < n_tok; ++n) {
        const Real* sp = s.ptr() + ((t * batch + bi) * n_tok + n) * d;
        for (std::size_t di = 0; di < d; ++di) {
          const Real v = sp[di];
          if (v == Real{0}) continue;
          for (std::size_t k = 0; k < classes; ++k) acc[k] += v * w[di * classes + k];
        }
      }
    for (std::size_t k = 0; k < classes; ++k)
      logits[bi * classes + k] = acc[k] * norm + model.head.bias.value[k];
  }
  detail::check(o, logits, "head.fc");
  if (cache) cache->final_s = std::move(s);
  return logits;
}

/// Full forward pass. Images are [T, C, H, W] (logits [classes]) or
/// [T, B, H, W, C] (logits [B, classes]).
template <typename Real>
Tensor<Real> model_forward(const Model<Real>& model, const Tensor<Real>& images,
                           const ForwardOptions<Real>& o = {}, ForwardCache<Real>* cache = nullptr) {
  Tensor<Real> u = sps_forward(model, images, o, cache ? &cache->sps : nullptr);
  if (cache) cache->blocks.assign(model.blocks.size(), {});
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    u = encoder_block_forward(model, l, u, o, cache ? &cache->blocks[l] : nullptr);
  }
  return head_forward(model, u, o, cache ? &cache->head : nullptr);
}

// ---------------------------------------------------------------------------
// Backward pass. Accumulates parameter gradients for a forward pass that was
// run with a cache (Hard or Smooth mode, Membrane shortcut).

template <typename Real>
Tensor<Real> head_backward(Model<Real>& model, const HeadCache<Real>& cache,
                           const Tensor<Real>& grad_logits) {
  const ModelConfig& c = model.config;
  const Tensor<Real>& s = cache.final_s;
  const std::size_t steps = s.dim(0), n_tok = s.dim(s.rank() - 2), d = s.shape().back();
  const std::size_t batch = s.size() / (steps * n_tok * d);
  const std::size_t classes = c.num_classes;
  const Real norm = Real{1} / static_cast<Real>(steps * n_tok);
  Real* gw = model.head.weight.grad_ptr();
  Real* gb = model.head.bias.grad_ptr();
  const Real* w = model.head.weight.value.ptr();
  Tensor<Real> grad_s(s.shape());
  std::vector<Real> per_channel(d);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const Real* gl = grad_logits.ptr() + bi * classes;
    for (std::size_t k = 0; k < classes; ++k) gb[k] += gl[k];
    for (std::size_t di = 0; di < d; ++di) {
      Real acc{0};
      for (std::size_t k = 0; k < classes; ++k) acc += w[di * classes + k] * gl[k];
      per_channel[di] = acc * norm;
    }
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t n = 0; n < n_tok; ++n) {
        const std::size_t row = ((t * batch + bi) * n_tok + n) * d;
        for (std::size_t di = 0; di < d; ++di) {
          grad_s[row + di] = per_channel[di];
          const Real v = s[row + di];
          if (v == Real{0}) continue;
          for (std::size_t k = 0; k < classes; ++k) gw[di * classes + k] += v * norm * gl[k];
        }
      }
  }
  return lif_backward(grad_s, cache.final_u, c.lif);
}

template <typename Real>
Tensor<Real> encoder_block_backward(Model<Real>& model, std::size_t index,
                                    const BlockCache<Real>& cache, const Tensor<Real>& grad_out) {
  auto& b = model.blocks[index];
  const auto& lif = model.config.lif;

  // out = fc2_bn(fc2(hid_s)) + mid_u
  Tensor<Real> grad_mid_u = grad_out;
  Tensor<Real> g = b.fc2_bn.backward(grad_out, cache.fc2_bn);
  g = b.fc2.backward(cache.hid_s, g, true);
  g = lif_backward(g, cache.hid_u, lif);
  g = b.fc1_bn.backward(g, cache.fc1_bn);
  g = b.fc1.backward(cache.mid_s, g, true);
  detail::add_into(grad_mid_u, lif_backward(g, cache.mid_lif_u, lif));

  // mid_u = proj_bn(proj(attn)) + in_u
  Tensor<Real> grad_in_u = grad_mid_u;
  g = b.proj_bn.backward(grad_mid_u, cache.proj_bn);
  g = b.proj.backward(cache.attn, g, true);
  auto ga = kernel::sdsa_v1_backward(g, cache.q_s, cache.k_s, cache.v_s, cache.sdsa, lif);

  Tensor<Real> gq = b.q.backward(cache.s, b.q_bn.backward(lif_backward(ga.q, cache.q_u, lif), cache.q_bn), true);
  Tensor<Real> gk = b.k.backward(cache.s, b.k_bn.backward(lif_backward(ga.k, cache.k_u, lif), cache.k_bn), true);
  Tensor<Real> gv = b.v.backward(cache.s, b.v_bn.backward(lif_backward(ga.v, cache.v_u, lif), cache.v_bn), true);
  detail::add_into(gq, gk);
  detail::add_into(gq, gv);
  detail::add_into(grad_in_u, lif_backward(gq, cache.in_u, lif));
  return grad_in_u;
}

template <typename Real>
void sps_backward(Model<Real>& model, const SpsCache<Real>& cache, const Tensor<Real>& grad_u0) {
  const auto& lif = model.config.lif;
  Tensor<Real> grad_u = grad_u0.reshaped(cache.grid_shape);
  Tensor<Real> g = model.rpe_bn.backward(grad_u, cache.rpe_bn);
  g = model.rpe.backward(cache.rpe_in, g, true);
  detail::add_into(grad_u, lif_backward(g, cache.s_u, lif));

  g = max_pool2x2_backward(grad_u, cache.pool[3]);
  for (std::size_t i = 4; i-- > 0;) {
    if (i < 3) {
      g = max_pool2x2_backward(g, cache.pool[i]);
      g = lif_backward(g, cache.stage_u[i], lif);
    }
    g = model.sps[i].bn.backward(g, cache.bn[i]);
    g = model.sps[i].conv.backward(cache.conv_in[i], g, i > 0);
  }
}

template <typename Real>
void model_backward(Model<Real>& model, const ForwardCache<Real>& cache,
                    const Tensor<Real>& grad_logits) {
  Tensor<Real> g = head_backward(model, cache.head, grad_logits);
  for (std::size_t l = model.blocks.size(); l-- > 0;)
    g = encoder_block_backward(model, l, cache.blocks[l], g);
  sps_backward(model, cache.sps, g);
}

/// Folds the batch statistics recorded in a training-phase cache into the
/// running estimates used at evaluation time.
template <typename Real>
void update_running_stats(Model<Real>& model, const ForwardCache<Real>& cache) {
  for (std::size_t i = 0; i < 4; ++i) model.sps[i].bn.update_running(cache.sps.bn[i]);
  model.rpe_bn.update_running(cache.sps.rpe_bn);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    auto& b = model.blocks[l];
    const auto& c = cache.blocks[l];
    b.q_bn.update_running(c.q_bn);
    b.k_bn.update_running(c.k_bn);
    b.v_bn.update_running(c.v_bn);
    b.proj_bn.update_running(c.proj_bn);
    b.fc1_bn.update_running(c.fc1_bn);
    b.fc2_bn.update_running(c.fc2_bn);
  }
}

}  // namespace sdt
