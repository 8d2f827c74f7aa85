// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Leaky integrate-and-fire layer. Per timestep t and element:
//
//   U[t] = H[t-1] + X[t]
//   S[t] = Hea(U[t] - u_th)
//   H[t] = v_reset * S[t] + beta * U[t] * (1 - S[t])
//
// with H[-1] = 0. The backward pass replaces Hea' by a rectangular
// surrogate and treats the reset gate S[t] inside the H update as a constant.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sdt/tensor.hpp"

namespace sdt {

struct LifParams {
  double u_th = 1.0;
  double beta = 0.5;
  double v_reset = 0.0;
  double surrogate_width = 0.5;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw Error("lif: beta must lie in (0, 1)");
    if (!(u_th > v_reset)) throw Error("lif: u_th must exceed v_reset");
    if (!(surrogate_width > 0.0)) throw Error("lif: surrogate_width must be positive");
    if (!std::isfinite(u_th) || !std::isfinite(v_reset))
      throw Error("lif: u_th and v_reset must be finite");
  }

  bool operator==(const LifParams&) const = default;
};

/// Hard: binary spikes (the real network). Smooth: the spatial output is the
/// integral of the surrogate, giving a piecewise-linear relaxation whose
/// exact gradient is what the backward pass computes. Used for gradient
/// checking only.
enum class SpikeMode { Hard, Smooth };

inline int heaviside(double x) {
  if (!std::isfinite(x)) throw NumericError("heaviside: non-finite input");
  return x >= 0.0 ? 1 : 0;
}

/// Derivative of the rectangular surrogate at x (already offset by u_th).
inline double surrogate_grad(double x, double width) {
  if (!(width > 0.0)) throw Error("surrogate_grad: width must be positive");
  if (!std::isfinite(x)) throw NumericError("surrogate_grad: non-finite input");
  return std::abs(x) <= width ? 1.0 / (2.0 * width) : 0.0;
}

/// Antiderivative of surrogate_grad, clamped to [0, 1].
inline double surrogate_integral(double x, double width) {
  if (!(width > 0.0)) throw Error("surrogate_integral: width must be positive");
  if (x <= -width) return 0.0;
  if (x >= width) return 1.0;
  return (x + width) / (2.0 * width);
}

/// Records on which side of every non-smooth point each pre-activation
/// lies. Two forward passes with equal logs traverse the same linear piece of
/// the relaxed network, so central differences between them are valid.
class KinkLog {
 public:
  void push(std::uint8_t code) { codes_.push_back(code); }

  /// Region of x relative to the kinks at -w, 0 (reset gate) and +w.
  void region(double x, double width) {
    std::uint8_t code = x < -width ? 0 : x < 0.0 ? 1 : x <= width ? 2 : 3;
    codes_.push_back(code);
  }

  void clear() { codes_.clear(); }
  const std::vector<std::uint8_t>& codes() const { return codes_; }
  bool operator==(const KinkLog&) const = default;

 private:
  std::vector<std::uint8_t> codes_;
};

template <typename Real>
struct LifResult {
  Tensor<Real> spikes;    // S, shape [T, ...]
  Tensor<Real> membrane;  // U, saved for backward
  Tensor<Real> state;     // H after every step; state at T-1 is H_final
};

/// Runs the LIF recurrence over the leading (time) axis of x.
template <typename Real>
LifResult<Real> lif_forward(const Tensor<Real>& x, const LifParams& p,
                            SpikeMode mode = SpikeMode::Hard, KinkLog* kinks = nullptr) {
  p.validate();
  if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("lif_forward: input needs a time axis");
  require_finite(x, "lif_forward input");

  const std::size_t steps = x.dim(0);
  const std::size_t width = x.size() / steps;
  const Real u_th = static_cast<Real>(p.u_th);
  const Real beta = static_cast<Real>(p.beta);
  const Real v_reset = static_cast<Real>(p.v_reset);

  LifResult<Real> r{Tensor<Real>(x.shape()), Tensor<Real>(x.shape()), Tensor<Real>(x.shape())};
  std::vector<Real> h(width, Real{0});
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t base = t * width;
    for (std::size_t i = 0; i < width; ++i) {
      const Real u = h[i] + x[base + i];
      const bool fired = u - u_th >= Real{0};
      h[i] = fired ? v_reset : beta * u;
      r.membrane[base + i] = u;
      r.state[base + i] = h[i];
      if (mode == SpikeMode::Hard) {
        r.spikes[base + i] = fired ? Real{1} : Real{0};
      } else {
        r.spikes[base + i] =
            static_cast<Real>(surrogate_integral(u - u_th, p.surrogate_width));
      }
      if (kinks) kinks->region(static_cast<double>(u - u_th), p.surrogate_width);
    }
  }
  return r;
}

/// Gradient of the loss with respect to the LIF input, given the gradient
/// with respect to the emitted spikes and the saved membrane potentials.
template <typename Real>
Tensor<Real> lif_backward(const Tensor<Real>& grad_spikes, const Tensor<Real>& membrane,
                          const LifParams& p) {
  p.validate();
  if (membrane.empty()) throw Error("lif_backward: missing saved membrane state");
  require_same_shape(grad_spikes, membrane, "lif_backward");

  const std::size_t steps = membrane.dim(0);
  const std::size_t width = membrane.size() / steps;
  const Real u_th = static_cast<Real>(p.u_th);
  const Real beta = static_cast<Real>(p.beta);
  const Real w = static_cast<Real>(p.surrogate_width);
  const Real slope = Real{1} / (Real{2} * w);

  Tensor<Real> grad_x(membrane.shape());
  std::vector<Real> grad_h(width, Real{0});  // dL/dH[t], flowing back from U[t+1]
  for (std::size_t t = steps; t-- > 0;) {
    const std::size_t base = t * width;
    for (std::size_t i = 0; i < width; ++i) {
      const Real v = membrane[base + i] - u_th;
      const Real spatial = (v <= w && v >= -w) ? grad_spikes[base + i] * slope : Real{0};
      const Real temporal = v >= Real{0} ? Real{0} : grad_h[i] * beta;
      const Real gu = spatial + temporal;
      grad_x[base + i] = gu;
      grad_h[i] = gu;
    }
  }
  return grad_x;
}

}  // namespace sdt
