// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sdt/model.hpp"

namespace sdt {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 0.05;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  std::uint64_t seed = 1;
  std::string loss = "cross_entropy";
  double momentum = 0.9;

  void validate() const {
    if (epochs == 0) throw Error("train: epochs must be positive");
    if (batch_size == 0) throw Error("train: batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw Error("train: learning_rate must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train: momentum must lie in [0, 1)");
    if (loss != "cross_entropy") throw Error("train: unsupported loss '" + loss + "'");
  }
};

// ---------------------------------------------------------------------------
// Datasets

struct Sample {
  Tensor<float> image;  // [C, H, W], values in [0, 1]
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  std::size_t channels = 0, height = 0, width = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    for (const auto& s : samples) {
      if (s.label >= num_classes) throw Error("dataset: label out of range");
      if (s.image.shape() != Shape{channels, height, width})
        throw ShapeError("dataset: inconsistent image geometry");
    }
  }
};

enum class SynthKind { Stripes, Blobs, XorPatch };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "stripes") return SynthKind::Stripes;
  if (s == "blobs") return SynthKind::Blobs;
  if (s == "xor-patch") return SynthKind::XorPatch;
  throw Error("unknown dataset kind '" + s + "' (expected stripes, blobs or xor-patch)");
}

struct Geometry {
  std::size_t channels = 3, height = 32, width = 32;
};

/// Deterministic toy image sets whose classes no linear pixel classifier
/// separates:
///   stripes   - class k is a grating at k*45 degrees with random phase and
///               frequency (up to 4 classes)
///   blobs     - class k shows k+1 Gaussian blobs at random places (up to 4)
///   xor-patch - two corner patches, each bright or dark; label is their XOR
inline Dataset synth_dataset(SynthKind kind, std::size_t n_per_class, Geometry geo,
                             std::uint64_t seed, std::size_t classes = 0) {
  if (geo.height == 0 || geo.width == 0 || geo.height % 16 || geo.width % 16 || geo.channels == 0)
    throw Error("synth_dataset: height and width must be positive multiples of 16");
  if (classes == 0) classes = kind == SynthKind::XorPatch ? 2 : 4;
  if (kind == SynthKind::XorPatch && classes != 2)
    throw Error("synth_dataset: xor-patch has exactly 2 classes");
  if (classes < 2 || classes > 4) throw Error("synth_dataset: 2 to 4 classes supported");

  Dataset ds;
  ds.num_classes = classes;
  ds.channels = geo.channels;
  ds.height = geo.height;
  ds.width = geo.width;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.08);
  const double h = static_cast<double>(geo.height), w = static_cast<double>(geo.width);

  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t label = 0; label < classes; ++label) {
      std::vector<double> plane(geo.height * geo.width, 0.0);
      if (kind == SynthKind::Stripes) {
        const double theta = static_cast<double>(label) * std::numbers::pi / 4.0;
        const double freq = 1.0 / (4.0 + 3.0 * unit(rng));
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (std::size_t y = 0; y < geo.height; ++y)
          for (std::size_t x = 0; x < geo.width; ++x)
            plane[y * geo.width + x] =
                0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * (x * ct + y * st) + phase);
      } else if (kind == SynthKind::Blobs) {
        for (std::size_t b = 0; b <= label; ++b) {
          const double cy = h * (0.15 + 0.7 * unit(rng)), cx = w * (0.15 + 0.7 * unit(rng));
          const double r = std::min(h, w) * (0.06 + 0.04 * unit(rng));
          for (std::size_t y = 0; y < geo.height; ++y)
            for (std::size_t x = 0; x < geo.width; ++x) {
              const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
              plane[y * geo.width + x] += std::exp(-d2 / (2.0 * r * r));
            }
        }
      } else {
        const bool a = unit(rng) < 0.5;
        const bool b = (label == 1) ? !a : a;
        const std::size_t ph = geo.height / 4, pw = geo.width / 4;
        for (std::size_t y = 0; y < geo.height; ++y)
          for (std::size_t x = 0; x < geo.width; ++x) {
            double v = 0.5;
            if (y < ph && x < pw) v = a ? 0.9 : 0.1;
            if (y >= geo.height - ph && x >= geo.width - pw) v = b ? 0.9 : 0.1;
            plane[y * geo.width + x] = v;
          }
      }
      Tensor<float> img({geo.channels, geo.height, geo.width});
      for (std::size_t c = 0; c < geo.channels; ++c) {
        const double gain = 0.85 + 0.15 * unit(rng);
        for (std::size_t p = 0; p < plane.size(); ++p)
          img[c * plane.size() + p] =
              static_cast<float>(std::clamp(gain * plane[p] + noise(rng), 0.0, 1.0));
      }
      ds.samples.push_back({std::move(img), label});
    }
  }
  return ds;
}

/// Stacks samples into [T, B, H, W, C], repeating each image at every
/// timestep.
template <typename Real>
Tensor<Real> make_batch(const Dataset& ds, std::span<const std::size_t> indices,
                        std::size_t timesteps) {
  const std::size_t b_n = indices.size(), c_n = ds.channels, h = ds.height, w = ds.width;
  Tensor<Real> out({timesteps, b_n, h, w, c_n});
  const std::size_t per_t = b_n * h * w * c_n;
  for (std::size_t bi = 0; bi < b_n; ++bi) {
    const Tensor<float>& img = ds.samples.at(indices[bi]).image;
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out[((bi * h + y) * w + x) * c_n + c] = static_cast<Real>(img[(c * h + y) * w + x]);
  }
  for (std::size_t t = 1; t < timesteps; ++t)
    std::copy_n(out.ptr(), per_t, out.ptr() + t * per_t);
  return out;
}

inline std::vector<std::size_t> labels_of(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ds.samples.at(i).label);
  return out;
}

// ---------------------------------------------------------------------------
// Loss

template <typename Real>
struct LossResult {
  double loss = 0.0;
  Tensor<Real> grad;  // dL/dlogits, [B, classes]
  std::size_t correct = 0;
};

/// Mean cross-entropy over the batch on (time-averaged) logits [B, classes].
template <typename Real>
LossResult<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::size_t> labels) {
  const std::size_t classes = logits.shape().back();
  const std::size_t batch = logits.size() / classes;
  if (labels.size() != batch) throw ShapeError("cross_entropy: label count mismatch");
  LossResult<Real> r{0.0, Tensor<Real>(logits.shape()), 0};
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* z = logits.ptr() + b * classes;
    const std::size_t y = labels[b];
    if (y >= classes) throw Error("cross_entropy: label out of range");
    double peak = static_cast<double>(z[0]);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (z[k] > peak) {
        peak = static_cast<double>(z[k]);
        arg = k;
      }
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += std::exp(static_cast<double>(z[k]) - peak);
    const double log_z = peak + std::log(sum);
    r.loss += log_z - static_cast<double>(z[y]);
    r.correct += (arg == y);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(static_cast<double>(z[k]) - log_z);
      r.grad[b * classes + k] = static_cast<Real>((p - (k == y ? 1.0 : 0.0)) / batch);
    }
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

// ---------------------------------------------------------------------------
// Optimization

template <typename Real>
struct TrainState {
  std::vector<Tensor<Real>> velocity;  // one per parameter, canonical order
  std::size_t step = 0;                // optimizer steps taken
  std::size_t epoch = 0;               // completed epochs
};

inline double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.lr_schedule == LrSchedule::Constant || total_steps == 0) return cfg.learning_rate;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

struct StepResult {
  double loss = 0.0;
  double accuracy = 0.0;  // on this batch
  double lr = 0.0;
};

/// One SGD-with-momentum step on cross-entropy of time-averaged logits.
/// `images` is [T, B, H, W, C].
template <typename Real>
StepResult train_step(Model<Real>& model, const Tensor<Real>& images,
                      std::span<const std::size_t> labels, const TrainConfig& cfg,
                      TrainState<Real>& state, double lr) {
  if (labels.empty()) throw Error("train_step: empty batch");
  ForwardOptions<Real> opts;
  opts.phase = Phase::Train;
  ForwardCache<Real> cache;
  Tensor<Real> logits = model_forward(model, images, opts, &cache);
  LossResult<Real> loss = cross_entropy(logits, labels);
  if (!std::isfinite(loss.loss)) {
    opts.check_finite = true;
    model_forward(model, images, opts);  // throws naming the first bad layer
    throw NumericError("non-finite loss after layer head.fc");
  }

  model.zero_grad();
  model_backward(model, cache, loss.grad);
  update_running_stats(model, cache);

  auto params = model.parameters();
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (auto* p : params) state.velocity.emplace_back(p->value.shape());
  }
  const Real mu = static_cast<Real>(cfg.momentum);
  const Real rate = static_cast<Real>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = mu * v[j] + p.grad[j];
      p.value[j] -= rate * v[j];
    }
  }
  ++state.step;
  return {loss.loss, static_cast<double>(loss.correct) / static_cast<double>(labels.size()), lr};
}

/// Per-epoch sample order, a pure function of (seed, epoch) so that a run
/// resumed at an epoch boundary replays the same batches.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double accuracy = 0.0;
};

struct FitSummary {
  std::vector<StepLog> log;
  std::vector<std::size_t> dead_attention_blocks;  // 1-based block numbers
};

/// Runs epochs [state.epoch, cfg.epochs), at most `max_epochs` of them in
/// this call. The schedule always spans cfg.epochs, so a run cut short and
/// resumed matches an uninterrupted one. `on_epoch` fires after each
/// completed epoch (for checkpointing).
template <typename Real>
FitSummary fit(Model<Real>& model, const Dataset& ds, const TrainConfig& cfg,
               TrainState<Real>& state,
               const std::function<void(const StepLog&)>& on_step = {},
               const std::function<void(std::size_t)>& on_epoch = {},
               std::size_t max_epochs = std::numeric_limits<std::size_t>::max()) {
  cfg.validate();
  if (ds.empty()) throw Error("train: dataset is empty");
  ds.validate();
  const std::size_t per_epoch = (ds.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  const std::size_t n_blocks = model.blocks.size();
  std::vector<bool> qkv_alive(n_blocks, false);
  bool checked_after_warmup = false;

  FitSummary summary;
  const std::size_t last = state.epoch + std::min(max_epochs, cfg.epochs - std::min(cfg.epochs, state.epoch));
  for (std::size_t epoch = state.epoch; epoch < last; ++epoch) {
    const auto order = epoch_order(ds.size(), cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto images = make_batch<Real>(ds, idx, model.config.timesteps);
      const auto labels = labels_of(ds, idx);
      const double lr = learning_rate_at(cfg, state.step, total);
      const StepResult r = train_step(model, images, labels, cfg, state, lr);
      // Gradient flow is judged after the first epoch.
      if (epoch > 0) {
        checked_after_warmup = true;
        for (std::size_t l = 0; l < n_blocks; ++l) {
          const auto& b = model.blocks[l];
          auto nonzero = [](const Parameter<Real>& p) {
            return std::any_of(p.grad.data().begin(), p.grad.data().end(),
                               [](Real g) { return g != Real{0}; });
          };
          if (nonzero(b.q.weight) && nonzero(b.k.weight) && nonzero(b.v.weight)) qkv_alive[l] = true;
        }
      }
      StepLog entry{state.step, epoch, r.loss, lr, r.accuracy};
      summary.log.push_back(entry);
      if (on_step) on_step(entry);
    }
    state.epoch = epoch + 1;
    if (on_epoch) on_epoch(epoch);
  }
  if (checked_after_warmup)
    for (std::size_t l = 0; l < n_blocks; ++l)
      if (!qkv_alive[l]) summary.dead_attention_blocks.push_back(l + 1);
  return summary;
}

/// Fraction of argmax-correct predictions with evaluation-mode normalization.
template <typename Real>
double evaluate(const Model<Real>& model, const Dataset& ds, std::size_t batch_size = 32) {
  if (ds.empty()) throw Error("evaluate: dataset is empty");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    std::span<const std::size_t> chunk(idx.data() + start, end - start);
    const Tensor<Real> logits =
        model_forward(model, make_batch<Real>(ds, chunk, model.config.timesteps));
    const std::size_t classes = logits.shape().back();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const Real* z = logits.ptr() + b * classes;
      const std::size_t pred = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
      correct += (pred == ds.samples[chunk[b]].label);
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Gradient verification against the relaxed network.

struct GradGroupReport {
  std::string name;
  std::size_t count = 0;
  std::size_t excluded = 0;  // perturbation crossed a kink
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double rel_error = 0.0;
  bool trivial = false;  // both gradients vanish
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradGroupReport> groups;
  double cosine = 1.0;  // over all non-excluded entries
  double tolerance = 0.0;
  std::size_t excluded = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double tolerance = 1e-2;
  double step = 1e-6;
  double zero_floor = 1e-8;  // norms below this count as zero
};

/// Compares backprop gradients of the relaxed network (spikes replaced by
/// the integral of the surrogate, reset gate held piecewise constant) with
/// central differences, one parameter group at a time. Entries whose
/// perturbation moves any pre-activation across a kink are excluded.
template <typename Real>
GradCheckReport grad_check(Model<Real>& model, const Tensor<Real>& images,
                           std::span<const std::size_t> labels, GradCheckOptions opt = {}) {
  ForwardOptions<Real> fo;
  fo.phase = Phase::Train;
  fo.mode = SpikeMode::Smooth;

  ForwardCache<Real> cache;
  const auto base = cross_entropy(model_forward(model, images, fo, &cache), labels);
  model.zero_grad();
  model_backward(model, cache, base.grad);

  auto loss_at = [&](KinkLog& kinks) {
    ForwardOptions<Real> o = fo;
    o.kinks = &kinks;
    return cross_entropy(model_forward(model, images, o), labels).loss;
  };

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  double dot = 0.0, na = 0.0, nf = 0.0;
  for (auto* p : model.parameters()) {
    GradGroupReport g;
    g.name = p->name;
    g.count = p->size();
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const Real saved = p->value[i];
      KinkLog plus_k, minus_k;
      p->value[i] = saved + static_cast<Real>(opt.step);
      const double plus = loss_at(plus_k);
      p->value[i] = saved - static_cast<Real>(opt.step);
      const double minus = loss_at(minus_k);
      p->value[i] = saved;
      if (!(plus_k == minus_k)) {
        ++g.excluded;
        continue;
      }
      const double fd = (plus - minus) / (2.0 * opt.step);
      const double an = static_cast<double>(p->grad[i]);
      diff2 += (an - fd) * (an - fd);
      a2 += an * an;
      f2 += fd * fd;
      dot += an * fd;
    }
    na += a2;
    nf += f2;
    g.analytic_norm = std::sqrt(a2);
    g.numeric_norm = std::sqrt(f2);
    const double scale = std::max(g.analytic_norm, g.numeric_norm);
    g.trivial = scale < opt.zero_floor;
    g.rel_error = g.trivial ? 0.0 : std::sqrt(diff2) / scale;
    g.passed = g.rel_error <= opt.tolerance;
    report.excluded += g.excluded;
    report.groups.push_back(g);
  }
  report.cosine = (na > 0.0 && nf > 0.0) ? dot / std::sqrt(na * nf) : 1.0;
  report.passed = std::all_of(report.groups.begin(), report.groups.end(),
                              [](const auto& g) { return g.passed; });
  return report;
}

}  // namespace sdt
