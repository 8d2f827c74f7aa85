// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Independent reference implementations used as test oracles. They share
// no code with the library beyond the tensor container.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sdt/tensor.hpp"

namespace oracle {

/// One neuron, one input sequence. Returns spikes and H after each step.
struct ScalarLif {
  double u_th = 1.0, beta = 0.5, v_reset = 0.0;

  template <typename Real>
  void run(const std::vector<Real>& x, std::vector<Real>& s, std::vector<Real>& h_out) const {
    Real h = 0;
    s.clear();
    h_out.clear();
    for (Real xi : x) {
      Real u = h + xi;
      Real spike = (u - static_cast<Real>(u_th)) >= Real(0) ? Real(1) : Real(0);
      h = static_cast<Real>(v_reset) * spike + static_cast<Real>(beta) * u * (Real(1) - spike);
      s.push_back(spike);
      h_out.push_back(h);
    }
  }
};

/// Relaxed scalar LIF: spike output replaced by the clamped ramp, reset
/// gate kept hard. Returns sum_t c[t] * s[t] for a fixed readout c.
inline double smooth_lif_readout(const std::vector<double>& x, const std::vector<double>& c,
                                 double u_th, double beta, double v_reset, double w) {
  double h = 0.0, out = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double u = h + x[t];
    const double v = u - u_th;
    const double s = v <= -w ? 0.0 : v >= w ? 1.0 : (v + w) / (2 * w);
    const double gate = v >= 0 ? 1.0 : 0.0;
    h = v_reset * gate + beta * u * (1.0 - gate);
    out += c[t] * s;
  }
  return out;
}

inline std::vector<std::uint8_t> random_bits(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = b(rng) ? 1 : 0;
  return out;
}

}  // namespace oracle
