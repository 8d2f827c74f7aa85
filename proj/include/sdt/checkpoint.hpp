// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint layout (all integers u32 little-endian):
//
//   "SDTF" version
//   record*: name_len name rank dim[rank] float32[prod(dim)]
//
// The first record is "__config" with the ModelConfig scalars in declared
// order. Parameters and normalization buffers follow under their own names.
// A training checkpoint adds "__train.step", "__train.epoch" and one
// "__momentum.<param>" record per parameter.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sdt/model.hpp"
#include "sdt/train.hpp"

namespace sdt {

inline constexpr char kCheckpointMagic[4] = {'S', 'D', 'T', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error("checkpoint: truncated file");
  }
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_records(const std::vector<Record>& records) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  for (const auto& r : records) {
    if (shape_size(r.shape) != r.values.size())
      throw Error("checkpoint: record '" + r.name + "' has inconsistent size");
    detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.values) detail::put_f32(out, v);
  }
  return out;
}

inline std::vector<Record> decode_records(std::string bytes) {
  detail::Reader in(std::move(bytes));
  if (in.str(4) != std::string(kCheckpointMagic, 4)) throw Error("checkpoint: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  std::vector<Record> out;
  while (!in.done()) {
    Record r;
    r.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(in.u32());
    r.values.resize(shape_size(r.shape));
    for (auto& v : r.values) v = in.f32();
    out.push_back(std::move(r));
  }
  return out;
}

template <typename Real>
Record to_record(const std::string& name, const Tensor<Real>& t) {
  Record r{name, t.shape(), {}};
  r.values.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) r.values.push_back(static_cast<float>(t[i]));
  return r;
}

template <typename Real>
std::vector<Record> model_records(const Model<Real>& model, const TrainState<Real>* state = nullptr) {
  std::vector<Record> out;
  const auto scalars = model.config.scalars();
  Record cfg{"__config", {scalars.size()}, {}};
  for (double v : scalars) cfg.values.push_back(static_cast<float>(v));
  out.push_back(std::move(cfg));
  for (const auto* p : model.parameters()) out.push_back(to_record(p->name, p->value));
  for (const auto* b : model.buffers()) out.push_back(to_record(b->name, b->value));
  if (state) {
    out.push_back({"__train.step", {1}, {static_cast<float>(state->step)}});
    out.push_back({"__train.epoch", {1}, {static_cast<float>(state->epoch)}});
    const auto params = model.parameters();
    if (!state->velocity.empty()) {
      if (state->velocity.size() != params.size()) throw Error("checkpoint: optimizer state mismatch");
      for (std::size_t i = 0; i < params.size(); ++i)
        out.push_back(to_record("__momentum." + params[i]->name, state->velocity[i]));
    }
  }
  return out;
}

template <typename Real>
void save_checkpoint(const std::string& path, const Model<Real>& model,
                     const TrainState<Real>* state = nullptr) {
  const std::string bytes = encode_records(model_records(model, state));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

template <typename Real>
struct LoadedCheckpoint {
  Model<Real> model;
  TrainState<Real> state;
  bool has_train_state = false;
};

template <typename Real = float>
LoadedCheckpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::vector<Record> records = decode_records(std::move(bytes));
  if (records.empty() || records.front().name != "__config")
    throw Error("checkpoint: first record must be __config");

  std::vector<double> scalars(records.front().values.begin(), records.front().values.end());
  ModelConfig config = ModelConfig::from_scalars(scalars);
  LoadedCheckpoint<Real> out{Model<Real>(config), {}, false};

  std::map<std::string, const Record*> by_name;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (!by_name.emplace(records[i].name, &records[i]).second)
      throw Error("checkpoint: duplicate record '" + records[i].name + "'");
  }
  auto take = [&](const std::string& name, Tensor<Real>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint: missing record '" + name + "'");
    if (it->second->shape != dst.shape())
      throw ShapeError("checkpoint: record '" + name + "' has shape " +
                       shape_str(it->second->shape) + ", model expects " + shape_str(dst.shape()));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second->values[i]);
    by_name.erase(it);
  };
  for (auto* p : out.model.parameters()) take(p->name, p->value);
  for (auto* b : out.model.buffers()) take(b->name, b->value);

  if (by_name.count("__train.step")) {
    out.has_train_state = true;
    auto scalar = [&](const std::string& name) {
      auto it = by_name.find(name);
      if (it == by_name.end() || it->second->values.size() != 1)
        throw Error("checkpoint: missing or malformed record '" + name + "'");
      const auto v = static_cast<std::size_t>(it->second->values[0]);
      by_name.erase(it);
      return v;
    };
    out.state.step = scalar("__train.step");
    out.state.epoch = scalar("__train.epoch");
    const auto params = out.model.parameters();
    if (by_name.count("__momentum." + params.front()->name)) {
      for (auto* p : params) {
        Tensor<Real> v(p->value.shape());
        take("__momentum." + p->name, v);
        out.state.velocity.push_back(std::move(v));
      }
    }
  }
  if (!by_name.empty()) throw Error("checkpoint: unexpected record '" + by_name.begin()->first + "'");
  return out;
}

}  // namespace sdt
