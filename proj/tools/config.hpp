// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// YAML run configuration with four sections: model, train, profile, io.
// Keys mirror the library field names. Unknown keys are errors that name
// the file, line and dotted key path.

#include <yaml-cpp/yaml.h>

#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "sdt/profiler.hpp"
#include "sdt/train.hpp"

namespace sdt::cli {

struct DataConfig {
  std::string dataset = "stripes";
  std::size_t samples_per_class = 200;
};

struct ProfileConfig {
  EnergyConstants energy;
  std::string dataset = "stripes";
  std::size_t samples = 8;
};

struct IoConfig {
  std::string out = ".";
  bool timestamps = true;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  ProfileConfig profile;
  IoConfig io;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string where(const std::string& file, const YAML::Node& n) {
  const auto m = n.Mark();
  return file + ":" + std::to_string(m.line + 1);
}

template <typename T>
T scalar(const std::string& file, const std::string& path, const YAML::Node& n) {
  if (!n.IsScalar()) throw ConfigError(where(file, n) + ": " + path + " must be a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::BadConversion&) {
    throw ConfigError(where(file, n) + ": " + path + " has invalid value '" + n.Scalar() + "'");
  }
}

inline std::size_t count(const std::string& file, const std::string& path, const YAML::Node& n) {
  const long long v = scalar<long long>(file, path, n);
  if (v < 0) throw ConfigError(where(file, n) + ": " + path + " must be non-negative");
  return static_cast<std::size_t>(v);
}

using Handler = std::function<void(const std::string& path, const YAML::Node&)>;

inline void walk(const std::string& file, const std::string& prefix, const YAML::Node& map,
                 const std::map<std::string, Handler>& keys) {
  if (!map.IsMap()) throw ConfigError(where(file, map) + ": " + prefix + " must be a mapping");
  for (const auto& kv : map) {
    const std::string key = kv.first.as<std::string>();
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where(file, kv.first) + ": unknown key '" + path + "'");
    it->second(path, kv.second);
  }
}

}  // namespace detail

/// Parses YAML text into `cfg`, leaving unspecified fields at their
/// current values. `file` is only used in messages.
inline void apply_yaml(RunConfig& cfg, const std::string& text, const std::string& file) {
  using detail::count;
  using detail::scalar;
  using detail::walk;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(file + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (root.IsNull()) return;
  const std::string& f = file;
  bool sps_given = false;

  auto& m = cfg.model;
  auto& t = cfg.train;
  walk(f, "", root, {
    {"model", [&](const std::string& p, const YAML::Node& n) {
      walk(f, p, n, {
        {"timesteps", [&](auto& q, auto& v) { m.timesteps = count(f, q, v); }},
        {"blocks", [&](auto& q, auto& v) { m.blocks = count(f, q, v); }},
        {"channels", [&](auto& q, auto& v) { m.channels = count(f, q, v); }},
        {"heads", [&](auto& q, auto& v) { m.heads = count(f, q, v); }},
        {"mlp_ratio", [&](auto& q, auto& v) { m.mlp_ratio = scalar<double>(f, q, v); }},
        {"in_channels", [&](auto& q, auto& v) { m.in_channels = count(f, q, v); }},
        {"height", [&](auto& q, auto& v) { m.height = count(f, q, v); }},
        {"width", [&](auto& q, auto& v) { m.width = count(f, q, v); }},
        {"num_classes", [&](auto& q, auto& v) { m.num_classes = count(f, q, v); }},
        {"sps_channels", [&](auto& q, auto& v) {
          if (!v.IsSequence() || v.size() != 4)
            throw ConfigError(detail::where(f, v) + ": " + q + " must be a list of 4 integers");
          for (std::size_t i = 0; i < 4; ++i) m.sps_channels[i] = count(f, q, v[i]);
          sps_given = true;
        }},
        {"lif", [&](auto& q, auto& v) {
          walk(f, q, v, {
            {"u_th", [&](auto& r, auto& w) { m.lif.u_th = scalar<double>(f, r, w); }},
            {"beta", [&](auto& r, auto& w) { m.lif.beta = scalar<double>(f, r, w); }},
            {"v_reset", [&](auto& r, auto& w) { m.lif.v_reset = scalar<double>(f, r, w); }},
            {"surrogate_width", [&](auto& r, auto& w) { m.lif.surrogate_width = scalar<double>(f, r, w); }},
          });
        }},
      });
    }},
    {"train", [&](const std::string& p, const YAML::Node& n) {
      walk(f, p, n, {
        {"epochs", [&](auto& q, auto& v) { t.epochs = count(f, q, v); }},
        {"batch_size", [&](auto& q, auto& v) { t.batch_size = count(f, q, v); }},
        {"learning_rate", [&](auto& q, auto& v) { t.learning_rate = scalar<double>(f, q, v); }},
        {"lr_schedule", [&](auto& q, auto& v) {
          const auto s = scalar<std::string>(f, q, v);
          if (s == "constant") t.lr_schedule = LrSchedule::Constant;
          else if (s == "cosine") t.lr_schedule = LrSchedule::Cosine;
          else throw ConfigError(detail::where(f, v) + ": " + q + " must be constant or cosine");
        }},
        {"seed", [&](auto& q, auto& v) { t.seed = scalar<std::uint64_t>(f, q, v); }},
        {"loss", [&](auto& q, auto& v) { t.loss = scalar<std::string>(f, q, v); }},
        {"momentum", [&](auto& q, auto& v) { t.momentum = scalar<double>(f, q, v); }},
        {"dataset", [&](auto& q, auto& v) { cfg.data.dataset = scalar<std::string>(f, q, v); }},
        {"samples_per_class", [&](auto& q, auto& v) { cfg.data.samples_per_class = count(f, q, v); }},
      });
    }},
    {"profile", [&](const std::string& p, const YAML::Node& n) {
      walk(f, p, n, {
        {"e_mac", [&](auto& q, auto& v) { cfg.profile.energy.e_mac = scalar<double>(f, q, v); }},
        {"e_ac", [&](auto& q, auto& v) { cfg.profile.energy.e_ac = scalar<double>(f, q, v); }},
        {"dataset", [&](auto& q, auto& v) { cfg.profile.dataset = scalar<std::string>(f, q, v); }},
        {"samples", [&](auto& q, auto& v) { cfg.profile.samples = count(f, q, v); }},
      });
    }},
    {"io", [&](const std::string& p, const YAML::Node& n) {
      walk(f, p, n, {
        {"out", [&](auto& q, auto& v) { cfg.io.out = scalar<std::string>(f, q, v); }},
        {"timestamps", [&](auto& q, auto& v) { cfg.io.timestamps = scalar<bool>(f, q, v); }},
      });
    }},
  });
  if (!sps_given) m.sps_channels = ModelConfig::default_sps_channels(m.channels);
}

inline void validate(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  cfg.profile.energy.validate();
  parse_synth_kind(cfg.data.dataset);
  parse_synth_kind(cfg.profile.dataset);
}

/// Every field with its current value, in the same layout `apply_yaml`
/// accepts.
inline std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(15);
  e << YAML::BeginMap;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "timesteps" << YAML::Value << c.model.timesteps;
  e << YAML::Key << "blocks" << YAML::Value << c.model.blocks;
  e << YAML::Key << "channels" << YAML::Value << c.model.channels;
  e << YAML::Key << "heads" << YAML::Value << c.model.heads;
  e << YAML::Key << "mlp_ratio" << YAML::Value << c.model.mlp_ratio;
  e << YAML::Key << "in_channels" << YAML::Value << c.model.in_channels;
  e << YAML::Key << "height" << YAML::Value << c.model.height;
  e << YAML::Key << "width" << YAML::Value << c.model.width;
  e << YAML::Key << "num_classes" << YAML::Value << c.model.num_classes;
  e << YAML::Key << "sps_channels" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto v : c.model.sps_channels) e << v;
  e << YAML::EndSeq;
  e << YAML::Key << "lif" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "u_th" << YAML::Value << c.model.lif.u_th;
  e << YAML::Key << "beta" << YAML::Value << c.model.lif.beta;
  e << YAML::Key << "v_reset" << YAML::Value << c.model.lif.v_reset;
  e << YAML::Key << "surrogate_width" << YAML::Value << c.model.lif.surrogate_width;
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "epochs" << YAML::Value << c.train.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  e << YAML::Key << "learning_rate" << YAML::Value << c.train.learning_rate;
  e << YAML::Key << "lr_schedule" << YAML::Value
    << (c.train.lr_schedule == LrSchedule::Cosine ? "cosine" : "constant");
  e << YAML::Key << "seed" << YAML::Value << c.train.seed;
  e << YAML::Key << "loss" << YAML::Value << c.train.loss;
  e << YAML::Key << "momentum" << YAML::Value << c.train.momentum;
  e << YAML::Key << "dataset" << YAML::Value << c.data.dataset;
  e << YAML::Key << "samples_per_class" << YAML::Value << c.data.samples_per_class;
  e << YAML::EndMap;

  e << YAML::Key << "profile" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "e_mac" << YAML::Value << c.profile.energy.e_mac;
  e << YAML::Key << "e_ac" << YAML::Value << c.profile.energy.e_ac;
  e << YAML::Key << "dataset" << YAML::Value << c.profile.dataset;
  e << YAML::Key << "samples" << YAML::Value << c.profile.samples;
  e << YAML::EndMap;

  e << YAML::Key << "io" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "out" << YAML::Value << c.io.out;
  e << YAML::Key << "timestamps" << YAML::Value << c.io.timestamps;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace sdt::cli
