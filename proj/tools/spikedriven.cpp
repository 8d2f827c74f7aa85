// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: parameter counts, training, energy profiling,
// attention maps and gradient verification.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numeric error.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "config.hpp"
#include "sdt/checkpoint.hpp"
#include "sdt/profiler.hpp"
#include "sdt/train.hpp"

namespace fs = std::filesystem;
using namespace sdt;
using sdt::cli::RunConfig;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> timesteps;
  std::string out;
  bool no_timestamps = false;
  std::string image;
  std::optional<std::size_t> samples;
  bool zero_rates = false;
  double tolerance = 1e-2;
  std::optional<std::size_t> stop_after;
};

RunConfig load_config(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) {
    std::ifstream f(o.config);
    if (!f) throw cli::ConfigError("cannot open config '" + o.config + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    cli::apply_yaml(cfg, ss.str(), o.config);
  }
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.timesteps) cfg.model.timesteps = *o.timesteps;
  if (!o.out.empty()) cfg.io.out = o.out;
  if (o.no_timestamps) cfg.io.timestamps = false;
  if (o.samples) cfg.profile.samples = *o.samples;
  cli::validate(cfg);
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path p(cfg.io.out);
  fs::create_directories(p);
  return p;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream f(p, std::ios::binary | mode);
  if (!f) throw Error("cannot open '" + p.string() + "' for writing");
  return f;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::string millions(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(n) / 1e6);
  return buf;
}

/// Model from a checkpoint when given (its geometry must agree with the
/// config, apart from the timestep override), else random weights.
Model<float> model_for(const RunConfig& cfg, const Options& o, bool& from_checkpoint) {
  from_checkpoint = !o.checkpoint.empty();
  if (!from_checkpoint) return build_model<float>(cfg.model, cfg.train.seed);
  auto loaded = load_checkpoint<float>(o.checkpoint);
  ModelConfig want = cfg.model;
  want.timesteps = loaded.model.config.timesteps;
  if (!o.config.empty() && !(want == loaded.model.config))
    throw Error("checkpoint '" + o.checkpoint + "' does not match the model section of '" +
                o.config + "'");
  loaded.model.config.timesteps = cfg.model.timesteps;
  return std::move(loaded.model);
}

Dataset dataset_for(const ModelConfig& m, const std::string& kind, std::size_t per_class,
                    std::uint64_t seed) {
  const SynthKind k = parse_synth_kind(kind);
  const std::size_t classes = k == SynthKind::XorPatch ? 2 : std::min<std::size_t>(m.num_classes, 4);
  if (m.num_classes < classes)
    throw Error("model has " + std::to_string(m.num_classes) + " classes, dataset '" + kind +
                "' needs " + std::to_string(classes));
  return synth_dataset(k, per_class, {m.in_channels, m.height, m.width}, seed, classes);
}

// ---------------------------------------------------------------------------

int cmd_defaults(const Options& o) {
  std::cout << cli::to_yaml(load_config(o));
  return 0;
}

int cmd_params(const Options& o) {
  const RunConfig cfg = load_config(o);
  const auto& c = cfg.model;
  const std::size_t total = count_params(c);
  std::cout << "model: Spiking Transformer-" << c.blocks << "-" << c.channels << " (" << c.heads
            << " heads, mlp_ratio " << c.mlp_ratio << ", " << c.height << "x" << c.width << ", "
            << c.num_classes << " classes)\n";
  std::cout << "parameters: " << total << " (" << millions(total) << ")\n";
  std::size_t sps = 0, attn = 0, mlp = 0, head = 0;
  for (const auto& [name, n] : param_breakdown(c)) {
    if (name.starts_with("sps")) sps += n;
    else if (name.ends_with(".sdsa")) attn += n;
    else if (name.ends_with(".mlp")) mlp += n;
    else head += n;
  }
  std::cout << "  sps        " << sps << "\n  attention  " << attn << "\n  mlp        " << mlp
            << "\n  head       " << head << "\n";
  for (const auto& [name, n] : param_breakdown(c)) std::cout << "    " << name << " " << n << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir = out_dir(cfg);
  Model<float> model = build_model<float>(cfg.model, cfg.train.seed);
  TrainState<float> state;
  if (!o.checkpoint.empty()) {
    auto loaded = load_checkpoint<float>(o.checkpoint);
    if (!(loaded.model.config == cfg.model))
      throw Error("checkpoint '" + o.checkpoint + "' was trained with a different model config");
    model = std::move(loaded.model);
    if (loaded.has_train_state) state = std::move(loaded.state);
    std::cout << "resuming at epoch " << state.epoch << ", step " << state.step << "\n";
  }
  const Dataset ds = dataset_for(cfg.model, cfg.data.dataset, cfg.data.samples_per_class,
                                 cfg.train.seed);
  const fs::path log_path = dir / "train_log.csv";
  const fs::path ckpt_path = dir / "checkpoint.sdtf";
  const bool fresh = state.step == 0;
  std::ofstream log = open_out(log_path, fresh ? std::ios::trunc : std::ios::app);
  if (fresh) log << "step,epoch,loss,lr,accuracy\n";

  auto on_step = [&](const StepLog& s) {
    log << s.step << ',' << s.epoch << ',' << fmt_num(s.loss) << ',' << fmt_num(s.lr) << ','
        << fmt_num(s.accuracy) << "\n";
  };
  auto on_epoch = [&](std::size_t epoch) {
    log.flush();
    save_checkpoint(ckpt_path.string(), model, &state);
    std::cout << "epoch " << epoch + 1 << "/" << cfg.train.epochs << " done\n";
  };
  const FitSummary summary = fit(model, ds, cfg.train, state, on_step, on_epoch,
                                 o.stop_after.value_or(cfg.train.epochs));
  save_checkpoint(ckpt_path.string(), model, &state);
  if (!summary.dead_attention_blocks.empty()) {
    std::cout << "warning: no Q/K/V gradient after warmup in block(s)";
    for (auto b : summary.dead_attention_blocks) std::cout << ' ' << b;
    std::cout << "\n";
  }
  std::cout << "train accuracy: " << fmt_num(evaluate(model, ds)) << "\n";
  std::cout << "checkpoint: " << ckpt_path.string() << "\nlog: " << log_path.string() << "\n";
  return 0;
}

int cmd_profile(const Options& o) {
  const RunConfig cfg = load_config(o);
  const fs::path dir = out_dir(cfg);
  bool from_ckpt = false;
  const Model<float> model = model_for(cfg, o, from_ckpt);
  const ModelConfig& c = model.config;

  FiringRateTrace trace;
  if (o.zero_rates) {
    trace = uniform_trace(c, 0.0);
  } else {
    if (cfg.profile.samples == 0) throw Error("profile: samples must be positive");
    const std::size_t classes = std::min<std::size_t>(c.num_classes, 4);
    const std::size_t per_class = (cfg.profile.samples + classes - 1) / classes;
    Dataset ds = dataset_for(c, cfg.profile.dataset, per_class, cfg.train.seed + 1);
    ds.samples.resize(std::min(ds.samples.size(), cfg.profile.samples));
    RateRecorder<float> rec;
    ForwardOptions<float> fo;
    fo.observer = &rec;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::size_t idx[] = {i};
      model_forward(model, make_batch<float>(ds, idx, c.timesteps), fo);
    }
    trace = rec.trace(c);
  }

  EnergyReport spike = energy_spike_model(c, trace, cfg.profile.energy);
  EnergyReport ann = energy_ann_model(c, cfg.profile.energy);
  const double e1 = energy_vsa_layer(c.tokens(), c.channels, cfg.profile.energy);

  std::vector<std::string> header;
  if (cfg.io.timestamps) header.push_back("generated " + timestamp());
  header.push_back(from_ckpt ? "weights: checkpoint " + o.checkpoint
                             : "weights: random (seed " + std::to_string(cfg.train.seed) + ")");
  header.push_back(o.zero_rates ? "rates: injected zero trace"
                                : "rates: measured on " + std::to_string(cfg.profile.samples) +
                                      " " + cfg.profile.dataset + " samples");
  header.push_back("E_MAC " + fmt_num(cfg.profile.energy.e_mac) + " pJ, E_AC " +
                   fmt_num(cfg.profile.energy.e_ac) + " pJ");
  header.push_back("vanilla attention E1 is per layer; its scale multiply is priced at E_MAC");
  for (auto* r : {&spike, &ann}) r->notes.insert(r->notes.begin(), header.begin(), header.end());

  {
    auto f = open_out(dir / "energy.csv");
    write_energy_csv(f, spike);
  }
  {
    auto f = open_out(dir / "energy_ann.csv");
    write_energy_csv(f, ann);
  }
  {
    auto f = open_out(dir / "sfr_trace.csv");
    for (const auto& h : header) f << "# " << h << "\n";
    write_trace_csv(f, trace);
  }

  std::cout << "model: " << c.blocks << "-" << c.channels << ", T=" << c.timesteps
            << ", N=" << c.tokens() << (from_ckpt ? "" : " (random weights)") << "\n";
  std::cout << "E1 vanilla attention layer (N=" << c.tokens() << ", D=" << c.channels
            << "): " << fmt_num(e1) << " pJ\n";
  std::cout << "spike-driven model total: " << fmt_num(spike.total_pj) << " pJ\n";
  std::cout << "non-spiking counterpart total: " << fmt_num(ann.total_pj) << " pJ\n";
  std::cout << "ratio (counterpart / spike-driven): "
            << (spike.total_pj > 0 ? fmt_num(ann.total_pj / spike.total_pj) : std::string("inf"))
            << "\n";
  std::cout << "reports: " << (dir / "energy.csv").string() << ", "
            << (dir / "energy_ann.csv").string() << ", " << (dir / "sfr_trace.csv").string()
            << "\n";
  return 0;
}

int cmd_attn(const Options& o) {
  const RunConfig cfg = load_config(o);
  if (o.image.empty()) throw Error("attn: --image is required");
  const fs::path dir = out_dir(cfg);
  bool from_ckpt = false;
  const Model<float> model = model_for(cfg, o, from_ckpt);
  const ModelConfig& c = model.config;
  const Tensor<float> img = read_pnm(o.image);
  if (img.shape() != Shape{c.in_channels, c.height, c.width})
    throw ShapeError("image '" + o.image + "' is " + shape_str(img.shape()) + ", model expects " +
                     shape_str({c.in_channels, c.height, c.width}));
  Tensor<float> seq({c.timesteps, c.in_channels, c.height, c.width});
  for (std::size_t t = 0; t < c.timesteps; ++t)
    std::copy(img.data().begin(), img.data().end(), seq.data().begin() + t * img.size());

  const auto maps = attention_maps(model, seq);
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const std::string stem = "attn_block" + std::to_string(l + 1);
    for (auto [tag, m] : {std::pair{"v_s", &maps[l].v_s}, std::pair{"v_hat", &maps[l].v_hat}}) {
      {
        auto f = open_out(dir / (stem + "_" + tag + ".csv"));
        write_heatmap_csv(f, *m);
      }
      auto f = open_out(dir / (stem + "_" + tag + ".pgm"));
      f << heatmap_pgm(*m);
    }
    std::cout << "block " << l + 1 << ": " << maps[l].v_s.rows << "x" << maps[l].v_s.cols
              << " maps, mean V_S rate " << fmt_num(maps[l].v_s.mean()) << ", mean output rate "
              << fmt_num(maps[l].v_hat.mean()) << "\n";
  }
  if (!from_ckpt) std::cout << "note: random weights (no --checkpoint)\n";
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig cfg = load_config(o);
  Model<double> model = build_model<double>(cfg.model, cfg.train.seed);
  if (!o.checkpoint.empty()) {
    auto loaded = load_checkpoint<float>(o.checkpoint);
    auto src = loaded.model.parameters();
    model = Model<double>(loaded.model.config);
    auto dst = model.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.cast<double>();
  }
  const ModelConfig& c = model.config;
  const Dataset ds = dataset_for(c, cfg.data.dataset, 1, cfg.train.seed);
  std::vector<std::size_t> idx{0, std::min<std::size_t>(1, ds.size() - 1)};
  const auto images = make_batch<double>(ds, idx, c.timesteps);
  const auto labels = labels_of(ds, idx);
  GradCheckOptions opt;
  opt.tolerance = o.tolerance;
  const GradCheckReport rep = grad_check(model, images, labels, opt);
  std::printf("%-24s %8s %8s %12s %12s %10s  %s\n", "group", "size", "excluded", "|analytic|",
              "|numeric|", "rel_err", "result");
  for (const auto& g : rep.groups)
    std::printf("%-24s %8zu %8zu %12.4e %12.4e %10.2e  %s\n", g.name.c_str(), g.count, g.excluded,
                g.analytic_norm, g.numeric_norm, g.rel_error,
                g.trivial ? "pass (zero)" : g.passed ? "pass" : "FAIL");
  std::printf("cosine %.6f, tolerance %.1e, excluded %zu: %s\n", rep.cosine, rep.tolerance,
              rep.excluded, rep.passed && rep.cosine >= 0.99 ? "PASS" : "FAIL");
  return rep.passed && rep.cosine >= 0.99 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spike-driven Transformer kernels, training and energy profiling"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "YAML config file")->check(CLI::ExistingFile);
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint to load or resume from");
    sub->add_option("--seed", o.seed, "override train.seed");
    sub->add_option("--timesteps", o.timesteps, "override model.timesteps");
    sub->add_option("--out", o.out, "output directory (overrides io.out)");
    sub->add_flag("--no-timestamps", o.no_timestamps, "omit timestamps from report headers");
  };
  struct Cmd {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Cmd cmds[] = {
      {"defaults", "print every configuration key with its default", cmd_defaults},
      {"params", "print the parameter count and per-module breakdown", cmd_params},
      {"train", "train on a synthetic dataset, writing a checkpoint and CSV log", cmd_train},
      {"profile", "firing-rate trace and energy reports", cmd_profile},
      {"attn", "per-token attention maps for one image", cmd_attn},
      {"gradcheck", "compare analytic and finite-difference gradients", cmd_gradcheck},
  };
  std::map<CLI::App*, const Cmd*> by_app;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    common(sub);
    if (std::string(c.name) == "profile") {
      sub->add_option("--samples", o.samples, "images used for the firing-rate trace");
      sub->add_flag("--zero-rates", o.zero_rates, "inject an all-zero firing-rate trace");
    }
    if (std::string(c.name) == "attn")
      sub->add_option("--image", o.image, "input image (PGM or PPM)")->required();
    if (std::string(c.name) == "train")
      sub->add_option("--stop-after", o.stop_after, "run at most this many epochs, then stop resumably");
    if (std::string(c.name) == "gradcheck")
      sub->add_option("--tolerance", o.tolerance, "per-group relative error bound");
    by_app[sub] = &c;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto& [sub, cmd] : by_app)
      if (sub->parsed()) return cmd->run(o);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const YAML::Exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
