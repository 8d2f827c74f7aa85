// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sdt {

/// Usage or configuration error (bad shapes, invalid parameters, bad files).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values showed up where the math requires finite ones.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor with value semantics.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  Real* ptr() noexcept { return data_.data(); }
  const Real* ptr() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data viewed under another shape of equal size.
  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
bool all_finite(const Tensor<Real>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](Real v) { return std::isfinite(v); });
}

template <typename Real>
void require_finite(const Tensor<Real>& t, const std::string& what) {
  if (!all_finite(t)) throw NumericError(what + ": non-finite value");
}

template <typename Real>
bool is_binary(const Tensor<Real>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](Real v) { return v == Real{0} || v == Real{1}; });
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const std::string& what) {
  if (a.shape() != b.shape())
    throw ShapeError(what + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

/// Binary activation tensor. Every entry is exactly 0 or 1; construction
/// rejects anything else.
class SpikeTensor {
 public:
  SpikeTensor() = default;
  explicit SpikeTensor(Shape shape) : shape_(std::move(shape)), bits_(shape_size(shape_), 0) {}
  SpikeTensor(Shape shape, std::vector<std::uint8_t> bits)
      : shape_(std::move(shape)), bits_(std::move(bits)) {
    if (bits_.size() != shape_size(shape_))
      throw ShapeError("spike data size does not match shape " + shape_str(shape_));
    for (auto b : bits_)
      if (b > 1) throw Error("spike tensor entries must be 0 or 1");
  }

  template <typename Real>
  static SpikeTensor from(const Tensor<Real>& t) {
    std::vector<std::uint8_t> bits(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == Real{0}) bits[i] = 0;
      else if (t[i] == Real{1}) bits[i] = 1;
      else throw Error("spike tensor entries must be 0 or 1");
    }
    return SpikeTensor(t.shape(), std::move(bits));
  }

  template <typename Real>
  Tensor<Real> as() const {
    return Tensor<Real>(shape_, std::vector<Real>(bits_.begin(), bits_.end()));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  void set(std::size_t i, bool on) { bits_[i] = on ? 1 : 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  bool operator==(const SpikeTensor&) const = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
};

}  // namespace sdt
