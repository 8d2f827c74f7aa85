// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Firing-rate instrumentation and the theoretical energy model.
//
// A spiking layer with FL synaptic operations per timestep, input firing
// rate R and T timesteps costs E_AC * T * R * FL. The first conv sees the
// real-valued image and is priced as MACs. The self-attention rows use the
// mean of the Q_S/K_S/V_S rates for the projections and the sum of the Q_S
// and K_S rates for the mask-and-sum stage over N*D elements.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sdt/model.hpp"

namespace sdt {

struct EnergyConstants {
  double e_mac = 4.6;  // pJ per multiply-accumulate
  double e_ac = 0.9;   // pJ per accumulate

  void validate() const {
    if (!(e_mac > 0.0) || !(e_ac > 0.0)) throw Error("energy constants must be positive");
  }
  bool operator==(const EnergyConstants&) const = default;
};

inline double firing_rate(const SpikeTensor& s) {
  if (s.size() == 0) throw Error("firing_rate: empty tensor");
  return static_cast<double>(s.count()) / static_cast<double>(s.size());
}

template <typename Real>
double firing_rate(const Tensor<Real>& s) {
  return firing_rate(SpikeTensor::from(s));
}

inline std::uint64_t flops_conv(long long k, long long h_out, long long w_out, long long c_in,
                                long long c_out) {
  if (k <= 0 || h_out <= 0 || w_out <= 0 || c_in <= 0 || c_out <= 0)
    throw Error("flops_conv: dimensions must be positive");
  return static_cast<std::uint64_t>(k * k) * static_cast<std::uint64_t>(h_out) *
         static_cast<std::uint64_t>(w_out) * static_cast<std::uint64_t>(c_in) *
         static_cast<std::uint64_t>(c_out);
}

inline std::uint64_t flops_mlp(long long in, long long out) {
  if (in <= 0 || out <= 0) throw Error("flops_mlp: dimensions must be positive");
  return static_cast<std::uint64_t>(in) * static_cast<std::uint64_t>(out);
}

/// Vanilla self-attention layer cost in pJ: projections 3ND^2, QK^T and
/// attention-times-V 2N^2D, scale N^2, softmax 2N^2, output linear ND^2.
/// The scale row's multiply is priced at e_mac.
inline double energy_vsa_layer(std::size_t n, std::size_t d, const EnergyConstants& k = {}) {
  if (n == 0 || d == 0) throw Error("energy_vsa_layer: dimensions must be positive");
  const double N = static_cast<double>(n), D = static_cast<double>(d);
  return k.e_mac * (3 * N * D * D + 2 * N * N * D + 2 * N * N + N * D * D) + k.e_mac * N * N;
}

// ---------------------------------------------------------------------------
// Firing-rate traces

struct SiteRates {
  std::string site;
  std::vector<double> per_step;
  double average = 0.0;
};

struct FiringRateTrace {
  std::vector<SiteRates> sites;
  double input_rate = 0.0;  // nonzero fraction of the image fed to the first conv
  std::size_t timesteps = 0;

  const SiteRates& at(const std::string& site) const {
    for (const auto& s : sites)
      if (s.site == site) return s;
    throw Error("firing-rate trace has no site '" + site + "'");
  }
  double rate(const std::string& site) const { return at(site).average; }
};

/// Firing-rate sites of a model, in report order.
inline std::vector<std::string> trace_sites(const ModelConfig& c) {
  std::vector<std::string> out = {"sps.conv1", "sps.conv2", "sps.conv3", "sps.conv4"};
  for (std::size_t l = 1; l <= c.blocks; ++l) {
    const std::string p = "block" + std::to_string(l);
    for (const char* s : {".sdsa.input", ".sdsa.v_s", ".sdsa.q_s", ".sdsa.k_s", ".sdsa.g",
                          ".sdsa.output", ".mlp.layer1", ".mlp.layer2"})
      out.push_back(p + s);
  }
  out.push_back("head.fc");
  return out;
}

/// Trace with every rate set to `rate`, for injecting synthetic rates.
inline FiringRateTrace uniform_trace(const ModelConfig& c, double rate) {
  FiringRateTrace t;
  t.timesteps = c.timesteps;
  t.input_rate = rate;
  for (const auto& s : trace_sites(c))
    t.sites.push_back({s, std::vector<double>(c.timesteps, rate), rate});
  return t;
}

/// Accumulates nonzero counts per site and timestep across forward passes.
template <typename Real>
class RateRecorder : public ForwardObserver<Real> {
 public:
  void operator_input(const std::string& op, const Tensor<Real>& x) override {
    if (op != "sps.conv1") return;
    for (std::size_t i = 0; i < x.size(); ++i) image_nonzero_ += x[i] != Real{0};
    image_total_ += x.size();
  }

  void spikes(const std::string& site, const Tensor<Real>& s) override {
    const std::size_t steps = s.dim(0), per = s.size() / steps;
    auto& acc = counts_[site];
    if (acc.nonzero.empty()) {
      acc.nonzero.assign(steps, 0);
      acc.total.assign(steps, 0);
    }
    if (acc.nonzero.size() != steps) throw ShapeError("rate recorder: timestep count changed");
    for (std::size_t t = 0; t < steps; ++t) {
      std::uint64_t nz = 0;
      for (std::size_t i = 0; i < per; ++i) {
        const Real v = s[t * per + i];
        if (v != Real{0} && v != Real{1})
          throw Error("rate recorder: site '" + site + "' is not binary");
        nz += v != Real{0};
      }
      acc.nonzero[t] += nz;
      acc.total[t] += per;
    }
  }

  FiringRateTrace trace(const ModelConfig& c) const {
    FiringRateTrace out;
    out.timesteps = c.timesteps;
    out.input_rate = image_total_ ? static_cast<double>(image_nonzero_) / image_total_ : 0.0;
    for (const auto& site : trace_sites(c)) {
      auto it = counts_.find(site);
      if (it == counts_.end()) throw Error("rate recorder: site '" + site + "' never observed");
      SiteRates r{site, {}, 0.0};
      std::uint64_t nz = 0, tot = 0;
      for (std::size_t t = 0; t < it->second.total.size(); ++t) {
        r.per_step.push_back(static_cast<double>(it->second.nonzero[t]) / it->second.total[t]);
        nz += it->second.nonzero[t];
        tot += it->second.total[t];
      }
      r.average = static_cast<double>(nz) / static_cast<double>(tot);
      out.sites.push_back(std::move(r));
    }
    return out;
  }

 private:
  struct Counts {
    std::vector<std::uint64_t> nonzero, total;
  };
  std::map<std::string, Counts> counts_;
  std::uint64_t image_nonzero_ = 0, image_total_ = 0;
};

/// Runs the model on a batch of images ([T, B, H, W, C] or [T, C, H, W]) and
/// records the firing rate of every site.
template <typename Real>
FiringRateTrace sfr_trace(const Model<Real>& model, const Tensor<Real>& images) {
  RateRecorder<Real> rec;
  ForwardOptions<Real> o;
  o.observer = &rec;
  model_forward(model, images, o);
  return rec.trace(model.config);
}

// ---------------------------------------------------------------------------
// Energy reports

enum class OpKind { MAC, AC };

inline const char* op_kind_name(OpKind k) { return k == OpKind::MAC ? "MAC" : "AC"; }

/// Where a layer's firing rate comes from.
struct RateSource {
  enum class Kind { Image, Site, MeanOf, SumOf, One } kind = Kind::Site;
  std::vector<std::string> sites;

  static RateSource image() { return {Kind::Image, {}}; }
  static RateSource one() { return {Kind::One, {}}; }
  static RateSource site(std::string s) { return {Kind::Site, {std::move(s)}}; }
  static RateSource mean_of(std::vector<std::string> s) { return {Kind::MeanOf, std::move(s)}; }
  static RateSource sum_of(std::vector<std::string> s) { return {Kind::SumOf, std::move(s)}; }

  double resolve(const FiringRateTrace& trace) const {
    switch (kind) {
      case Kind::Image: return trace.input_rate;
      case Kind::One: return 1.0;
      case Kind::Site: return trace.rate(sites.at(0));
      case Kind::MeanOf:
      case Kind::SumOf: {
        double sum = 0.0;
        for (const auto& s : sites) sum += trace.rate(s);
        return kind == Kind::SumOf ? sum : sum / static_cast<double>(sites.size());
      }
    }
    return 0.0;
  }
};

struct LayerSpec {
  std::string name;
  OpKind kind = OpKind::AC;
  double flops = 0.0;  // synaptic operations per timestep at rate 1
  RateSource rate;
};

struct EnergyRow {
  std::string layer;
  OpKind kind = OpKind::AC;
  double macs = 0.0;
  double acs = 0.0;
  double rate = 0.0;
  std::size_t timesteps = 0;
  double energy_pj = 0.0;
};

struct EnergyReport {
  std::vector<EnergyRow> rows;
  double total_macs = 0.0;
  double total_acs = 0.0;
  double total_pj = 0.0;
  std::vector<std::string> notes;

  const EnergyRow& row(const std::string& layer) const {
    for (const auto& r : rows)
      if (r.layer == layer) return r;
    throw Error("energy report has no row '" + layer + "'");
  }
};

inline EnergyReport energy_from_layers(const std::vector<LayerSpec>& layers,
                                       const FiringRateTrace& trace, std::size_t timesteps,
                                       const EnergyConstants& k = {}) {
  k.validate();
  EnergyReport rep;
  for (const auto& l : layers) {
    EnergyRow r{l.name, l.kind, 0.0, 0.0, l.rate.resolve(trace), timesteps, 0.0};
    const double ops = static_cast<double>(timesteps) * r.rate * l.flops;
    if (l.kind == OpKind::MAC) {
      r.macs = ops;
      r.energy_pj = k.e_mac * ops;
    } else {
      r.acs = ops;
      r.energy_pj = k.e_ac * ops;
    }
    rep.total_macs += r.macs;
    rep.total_acs += r.acs;
    rep.total_pj += r.energy_pj;
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

namespace detail {
inline double dbl(std::uint64_t v) { return static_cast<double>(v); }
}  // namespace detail

/// Layer list of the spike-driven model.
inline std::vector<LayerSpec> spike_layers(const ModelConfig& c) {
  c.validate();
  using detail::dbl;
  const auto& sc = c.sps_channels;
  const long long h = static_cast<long long>(c.height), w = static_cast<long long>(c.width);
  const double n = static_cast<double>(c.tokens()), d = static_cast<double>(c.channels);
  const double hid = static_cast<double>(c.hidden());
  std::vector<LayerSpec> out;
  out.push_back({"sps.conv1", OpKind::MAC,
                 dbl(flops_conv(3, h, w, static_cast<long long>(c.in_channels), sc[0])),
                 RateSource::image()});
  for (int i = 1; i < 4; ++i) {
    const long long f = 1LL << i;
    out.push_back({"sps.conv" + std::to_string(i + 1), OpKind::AC,
                   dbl(flops_conv(3, h / f, w / f, sc[i - 1], sc[i])),
                   RateSource::site("sps.conv" + std::to_string(i))});
  }
  out.push_back({"sps.rpe", OpKind::AC,
                 dbl(flops_conv(3, h / 16, w / 16, sc[3], sc[3])), RateSource::site("sps.conv4")});
  for (std::size_t l = 1; l <= c.blocks; ++l) {
    const std::string p = "block" + std::to_string(l);
    out.push_back({p + ".qkv", OpKind::AC, 3 * n * d * d,
                   RateSource::mean_of({p + ".sdsa.q_s", p + ".sdsa.k_s", p + ".sdsa.v_s"})});
    out.push_back({p + ".f", OpKind::AC, n * d,
                   RateSource::sum_of({p + ".sdsa.q_s", p + ".sdsa.k_s"})});
    out.push_back({p + ".proj", OpKind::AC, n * d * d, RateSource::site(p + ".sdsa.output")});
    out.push_back({p + ".mlp1", OpKind::AC, n * d * hid, RateSource::site(p + ".mlp.layer1")});
    out.push_back({p + ".mlp2", OpKind::AC, n * hid * d, RateSource::site(p + ".mlp.layer2")});
  }
  out.push_back({"head", OpKind::AC, n * d * static_cast<double>(c.num_classes),
                 RateSource::site("head.fc")});
  return out;
}

/// Layer list of the equivalent non-spiking network with vanilla attention,
/// executed once (no timesteps) with every operation a MAC.
inline std::vector<LayerSpec> ann_layers(const ModelConfig& c) {
  std::vector<LayerSpec> out;
  const double n = static_cast<double>(c.tokens()), d = static_cast<double>(c.channels);
  for (auto& l : spike_layers(c)) {
    const bool attention = l.name.ends_with(".qkv") || l.name.ends_with(".f") ||
                           l.name.ends_with(".proj");
    if (attention) continue;
    if (l.name == "head") l.flops = d * static_cast<double>(c.num_classes);
    l.kind = OpKind::MAC;
    l.rate = RateSource::one();
    const bool before_mlp = l.name.ends_with(".mlp1");
    if (before_mlp) {
      const std::string p = l.name.substr(0, l.name.size() - 5);
      out.push_back({p + ".qkv", OpKind::MAC, 3 * n * d * d, RateSource::one()});
      out.push_back({p + ".f", OpKind::MAC, 2 * n * n * d, RateSource::one()});
      out.push_back({p + ".scale", OpKind::MAC, n * n, RateSource::one()});
      out.push_back({p + ".softmax", OpKind::MAC, 2 * n * n, RateSource::one()});
      out.push_back({p + ".proj", OpKind::MAC, n * d * d, RateSource::one()});
    }
    out.push_back(std::move(l));
  }
  return out;
}

inline EnergyReport energy_spike_model(const ModelConfig& c, const FiringRateTrace& trace,
                                       const EnergyConstants& k = {}) {
  for (const auto& site : trace_sites(c)) trace.at(site);  // names the first missing site
  EnergyReport rep = energy_from_layers(spike_layers(c), trace, c.timesteps, k);
  rep.notes.push_back("spike-driven model, T=" + std::to_string(c.timesteps) +
                      "; first conv priced as MAC at the image nonzero rate");
  return rep;
}

inline EnergyReport energy_ann_model(const ModelConfig& c, const EnergyConstants& k = {}) {
  EnergyReport rep = energy_from_layers(ann_layers(c), FiringRateTrace{}, 1, k);
  rep.notes.push_back("non-spiking counterpart with vanilla attention, one pass");
  return rep;
}

// ---------------------------------------------------------------------------
// CSV and image output

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

inline void write_energy_csv(std::ostream& os, const EnergyReport& rep) {
  for (const auto& n : rep.notes) os << "# " << n << "\n";
  os << "layer,kind,macs,acs,rate,timesteps,energy_pj\n";
  for (const auto& r : rep.rows)
    os << r.layer << ',' << op_kind_name(r.kind) << ',' << fmt_num(r.macs) << ','
       << fmt_num(r.acs) << ',' << fmt_num(r.rate) << ',' << r.timesteps << ','
       << fmt_num(r.energy_pj) << "\n";
  os << "TOTAL,," << fmt_num(rep.total_macs) << ',' << fmt_num(rep.total_acs) << ",,,"
     << fmt_num(rep.total_pj) << "\n";
}

inline void write_trace_csv(std::ostream& os, const FiringRateTrace& trace) {
  os << "# input_rate " << fmt_num(trace.input_rate) << "\n";
  os << "site";
  for (std::size_t t = 1; t <= trace.timesteps; ++t) os << ",t" << t;
  os << ",average\n";
  for (const auto& s : trace.sites) {
    os << s.site;
    for (double r : s.per_step) os << ',' << fmt_num(r);
    os << ',' << fmt_num(s.average) << "\n";
  }
}

struct Heatmap {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;  // row-major

  double mean() const {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
};

/// Per-token firing rate of a spike tensor [T, N, D], averaged over time and
/// channels (and therefore heads), laid out on a rows x cols grid.
template <typename Real>
Heatmap token_rate_map(const Tensor<Real>& spikes, std::size_t rows, std::size_t cols) {
  if (spikes.rank() != 3) throw ShapeError("attention map input must be [T, N, D]");
  const std::size_t steps = spikes.dim(0), n = spikes.dim(1), d = spikes.dim(2);
  if (rows * cols != n)
    throw ShapeError("grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not hold " + std::to_string(n) + " tokens");
  Heatmap m{rows, cols, std::vector<double>(n, 0.0)};
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) m.values[i] += static_cast<double>(spikes[(t * n + i) * d + c]);
  for (auto& v : m.values) v /= static_cast<double>(steps * d);
  return m;
}

struct AttentionMaps {
  Heatmap v_s;    // value spikes entering the attention
  Heatmap v_hat;  // attention output
};

template <typename Real>
AttentionMaps attention_map_export(const Tensor<Real>& v_s, const Tensor<Real>& v_hat,
                                   std::size_t rows, std::size_t cols) {
  require_same_shape(v_s, v_hat, "attention_map_export");
  return {token_rate_map(v_s, rows, cols), token_rate_map(v_hat, rows, cols)};
}

inline void write_heatmap_csv(std::ostream& os, const Heatmap& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) os << (c ? "," : "") << fmt_num(m.values[r * m.cols + c]);
    os << "\n";
  }
}

/// Binary graymap (P5), min mapped to 0 and max to 255. A constant map is
/// written as all zeros.
inline std::string heatmap_pgm(const Heatmap& m) {
  std::string out = "P5\n" + std::to_string(m.cols) + " " + std::to_string(m.rows) + "\n255\n";
  if (m.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  const double span = *hi - *lo;
  for (double v : m.values) {
    const double g = span > 0.0 ? (v - *lo) / span * 255.0 : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(g))));
  }
  return out;
}

/// Captures V_S and the attention output of one encoder block.
template <typename Real>
class AttentionCapture : public ForwardObserver<Real> {
 public:
  explicit AttentionCapture(std::size_t block) : prefix_("block" + std::to_string(block)) {}
  void spikes(const std::string& site, const Tensor<Real>& s) override {
    if (site == prefix_ + ".sdsa.v_s") v_s = s;
    if (site == prefix_ + ".sdsa.output") v_hat = s;
  }
  Tensor<Real> v_s, v_hat;

 private:
  std::string prefix_;
};

/// Attention maps of every block for a single image [T, C, H, W].
template <typename Real>
std::vector<AttentionMaps> attention_maps(const Model<Real>& model, const Tensor<Real>& image) {
  if (image.rank() != 4) throw ShapeError("attention maps need one image [T, C, H, W]");
  std::vector<AttentionMaps> out;
  for (std::size_t l = 1; l <= model.blocks.size(); ++l) {
    AttentionCapture<Real> cap(l);
    ForwardOptions<Real> o;
    o.observer = &cap;
    model_forward(model, image, o);
    out.push_back(attention_map_export(cap.v_s, cap.v_hat, model.config.grid_height(),
                                       model.config.grid_width()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Portable anymap input

/// Reads a P2/P3/P5/P6 image as [C, H, W] floats in [0, 1].
inline Tensor<float> read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open image '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        ++pos;
      } else {
        t.push_back(ch);
        ++pos;
      }
    }
    if (t.empty()) throw Error("image '" + path + "': truncated header");
    return t;
  };
  auto number = [&]() {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }))
      throw Error("image '" + path + "': bad header field '" + t + "'");
    return std::stoul(t);
  };
  const std::string magic = token();
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw Error("image '" + path + "': only PGM/PPM (P2, P3, P5, P6) are supported");
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw Error("image '" + path + "': bad header");
  const std::size_t c = (magic == "P3" || magic == "P6") ? 3 : 1;
  const bool binary = magic == "P5" || magic == "P6";
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (binary) ++pos;  // single whitespace after maxval
  Tensor<float> out({c, h, w});
  for (std::size_t i = 0; i < h * w * c; ++i) {
    std::size_t v = 0;
    if (binary) {
      if (pos + bps > bytes.size()) throw Error("image '" + path + "': truncated pixel data");
      v = static_cast<unsigned char>(bytes[pos]);
      if (bps == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + 1]);
      pos += bps;
    } else {
      v = number();
    }
    if (v > maxval) throw Error("image '" + path + "': sample exceeds maxval");
    const std::size_t pix = i / c, ch = i % c;
    out[ch * h * w + pix] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spike-driven certification

struct CertificationReport {
  std::size_t operators_checked = 0;
  std::size_t residual_adds = 0;
  std::vector<std::string> violations;
  bool passed() const { return violations.empty() && operators_checked > 0; }
};

/// Checks that every linear/conv operator after the first conv receives
/// binary input and that no residual joins two spike tensors.
template <typename Real>
class SpikeDrivenCertifier : public ForwardObserver<Real> {
 public:
  void operator_input(const std::string& op, const Tensor<Real>& x) override {
    if (op == "sps.conv1") return;  // image input is real-valued by design
    ++report_.operators_checked;
    if (!is_binary(x)) report_.violations.push_back(op + ": non-binary input");
  }
  void residual_add(const std::string& where, Signal lhs, Signal rhs) override {
    ++report_.residual_adds;
    if (lhs == Signal::Spike && rhs == Signal::Spike)
      report_.violations.push_back(where + ": residual adds two spike tensors");
  }
  const CertificationReport& report() const { return report_; }

 private:
  CertificationReport report_;
};

template <typename Real>
CertificationReport certify_spike_driven(const Model<Real>& model, const Tensor<Real>& images,
                                         Shortcut shortcut = Shortcut::Membrane) {
  SpikeDrivenCertifier<Real> cert;
  ForwardOptions<Real> o;
  o.observer = &cert;
  o.shortcut = shortcut;
  model_forward(model, images, o);
  return cert.report();
}

}  // namespace sdt
