// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "sdt/profiler.hpp"

using sdt::ModelConfig;
using sdt::Tensor;

namespace {

ModelConfig tiny(std::size_t blocks = 1, std::size_t d = 8) {
  ModelConfig c = ModelConfig::standard(blocks, d, 2);
  c.timesteps = 2;
  c.height = c.width = 32;
  c.num_classes = 3;
  return c;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(FiringRate, Counts) {
  EXPECT_DOUBLE_EQ(sdt::firing_rate(sdt::SpikeTensor({3, 4})), 0.0);
  sdt::SpikeTensor s({12}, {1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(sdt::firing_rate(s), 0.25);
  EXPECT_DOUBLE_EQ(sdt::firing_rate(Tensor<float>({2, 2}, 1.0f)), 1.0);
  EXPECT_THROW(sdt::firing_rate(sdt::SpikeTensor()), sdt::Error);
}

TEST(Flops, ConvAndMlp) {
  EXPECT_EQ(sdt::flops_conv(3, 4, 4, 2, 8), 2304u);
  EXPECT_EQ(sdt::flops_conv(1, 1, 1, 1, 1), 1u);
  // First SPS conv at 224x224: 9 * 224 * 224 * 3 * 64.
  EXPECT_EQ(sdt::flops_conv(3, 224, 224, 3, 64), 86704128u);
  EXPECT_EQ(sdt::flops_mlp(512, 2048), 1048576u);
  EXPECT_EQ(sdt::flops_mlp(1, 1), 1u);
  EXPECT_EQ(sdt::flops_mlp(512, 512), 262144u);
  EXPECT_THROW(sdt::flops_conv(0, 1, 1, 1, 1), sdt::Error);
  EXPECT_THROW(sdt::flops_mlp(-3, 1), sdt::Error);
}

TEST(EnergyVsa, ClosedForm) {
  for (std::size_t d : {384u, 512u, 768u}) {
    const double n = 196, dd = static_cast<double>(d);
    const double expect = 4.6 * (3 * n * dd * dd + 2 * n * n * dd + 2 * n * n + n * dd * dd) + 4.6 * n * n;
    EXPECT_DOUBLE_EQ(sdt::energy_vsa_layer(196, d), expect);
  }
  // Published reference for the 384-channel model: 6.7e8 pJ.
  EXPECT_NEAR(sdt::energy_vsa_layer(196, 384), 6.7e8, 0.05 * 6.7e8);
}

TEST(EnergyModel, SingleLinearFixture) {
  sdt::FiringRateTrace trace;
  trace.sites.push_back({"x", {0.25, 0.25, 0.25, 0.25}, 0.25});
  std::vector<sdt::LayerSpec> layers{{"linear", sdt::OpKind::AC, 196.0 * 512 * 512, sdt::RateSource::site("x")}};
  auto rep = sdt::energy_from_layers(layers, trace, 4);
  EXPECT_DOUBLE_EQ(rep.total_pj, 0.9 * 4 * 0.25 * 196 * 262144);
  EXPECT_DOUBLE_EQ(rep.total_pj, 46242201.6);
}

TEST(EnergyModel, ZeroRatesGiveZeroTotal) {
  for (auto c : {tiny(), ModelConfig::standard(8, 512)}) {
    auto rep = sdt::energy_spike_model(c, sdt::uniform_trace(c, 0.0));
    EXPECT_EQ(rep.total_pj, 0.0);
  }
}

TEST(EnergyModel, SelfAttentionRowWithMeasuredRates) {
  ModelConfig c = ModelConfig::standard(8, 512);
  auto trace = sdt::uniform_trace(c, 0.1);
  for (auto& s : trace.sites) {
    if (s.site.ends_with(".sdsa.q_s")) s.average = 0.0091;
    if (s.site.ends_with(".sdsa.k_s")) s.average = 0.0090;
    if (s.site.ends_with(".sdsa.v_s")) s.average = 0.1649;
  }
  auto rep = sdt::energy_spike_model(c, trace);
  EXPECT_NEAR(rep.row("block1.f").energy_pj, 0.9 * 4 * (0.0091 + 0.0090) * 196 * 512, 1e-9);
  EXPECT_NEAR(rep.row("block1.f").energy_pj, 6539, 1.0);
  EXPECT_NEAR(rep.row("block3.qkv").rate, (0.0091 + 0.0090 + 0.1649) / 3, 1e-15);
}

TEST(EnergyModel, MissingSiteNamed) {
  ModelConfig c = tiny(2);
  auto trace = sdt::uniform_trace(c, 0.2);
  trace.sites.erase(trace.sites.begin() + 7);
  try {
    sdt::energy_spike_model(c, trace);
    FAIL();
  } catch (const sdt::Error& e) {
    EXPECT_NE(std::string(e.what()).find("block1.sdsa.k_s"), std::string::npos) << e.what();
  }
}

TEST(EnergyModel, EveryWeightedLayerHasARow) {
  ModelConfig c = tiny(3);
  auto spike = sdt::energy_spike_model(c, sdt::uniform_trace(c, 0.3));
  auto ann = sdt::energy_ann_model(c);
  auto m = sdt::build_model(c, 1);
  auto row_of = [](std::string op) {
    for (const char* s : {".q", ".k", ".v"})
      if (op.ends_with(s)) return op.substr(0, op.size() - 2) + ".qkv";
    if (op.ends_with(".fc1")) return op.substr(0, op.size() - 4) + ".mlp1";
    if (op.ends_with(".fc2")) return op.substr(0, op.size() - 4) + ".mlp2";
    return op;
  };
  for (const auto* p : m.parameters()) {
    if (p->value.rank() < 2) continue;  // norms and biases ride with their layer
    const std::string op = row_of(p->name.substr(0, p->name.rfind('.')));
    EXPECT_NO_THROW(spike.row(op)) << op;
    EXPECT_NO_THROW(ann.row(op)) << op;
  }
  std::set<std::string> per_block;
  for (const auto& r : ann.rows)
    if (r.layer.starts_with("block2.")) per_block.insert(r.layer.substr(7));
  EXPECT_EQ(per_block, (std::set<std::string>{"qkv", "f", "scale", "softmax", "proj", "mlp1", "mlp2"}));
  for (const auto& r : ann.rows) EXPECT_EQ(r.kind, sdt::OpKind::MAC);
}

TEST(EnergyModel, AnnAttentionRowsSumToVsaLayer) {
  ModelConfig c = ModelConfig::standard(1, 384);
  auto ann = sdt::energy_ann_model(c);
  double sum = 0;
  for (const char* r : {"qkv", "f", "scale", "softmax", "proj"}) sum += ann.row(std::string("block1.") + r).energy_pj;
  EXPECT_NEAR(sum, sdt::energy_vsa_layer(196, 384), 1e-6 * sum);
}

TEST(EnergyReportCsv, TotalsRecomputeFromColumns) {
  ModelConfig c = tiny(2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  auto trace = sdt::uniform_trace(c, 0.0);
  trace.input_rate = 0.9;
  for (auto& s : trace.sites) s.average = u(rng);
  std::ostringstream os;
  sdt::write_energy_csv(os, sdt::energy_spike_model(c, trace));
  auto rows = parse_csv(os.str());
  ASSERT_EQ(rows.front(), (std::vector<std::string>{"layer", "kind", "macs", "acs", "rate", "timesteps", "energy_pj"}));
  double macs = 0, acs = 0, pj = 0;
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 7u);
    const double m = std::stod(rows[i][2]), a = std::stod(rows[i][3]);
    EXPECT_NEAR(std::stod(rows[i][6]), m * 4.6 + a * 0.9, 1e-9 * (1 + std::stod(rows[i][6])));
    macs += m, acs += a, pj += std::stod(rows[i][6]);
    const double rate = std::stod(rows[i][4]);
    EXPECT_GE(rate, 0.0);
    EXPECT_LE(rate, rows[i][0].ends_with(".f") ? 2.0 : 1.0);
  }
  const auto& total = rows.back();
  ASSERT_EQ(total[0], "TOTAL");
  EXPECT_EQ(total[1], "");
  EXPECT_NEAR(std::stod(total[2]), macs, 1e-9 * macs);
  EXPECT_NEAR(std::stod(total[3]), acs, 1e-9 * acs);
  EXPECT_NEAR(std::stod(total[6]), pj, 1e-9 * pj);
  EXPECT_NEAR(std::stod(total[6]), 4.6 * std::stod(total[2]) + 0.9 * std::stod(total[3]), 1e-9 * pj);
}

TEST(SfrTrace, ZeroInputAllZero) {
  auto m = sdt::build_model(tiny(2), 1);
  auto t = sdt::sfr_trace(m, Tensor<float>({2, 3, 32, 32}));
  EXPECT_EQ(t.input_rate, 0.0);
  for (const auto& s : t.sites) EXPECT_EQ(s.average, 0.0) << s.site;
}

TEST(SfrTrace, RatesBoundedOnRandomModels) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = sdt::build_model(tiny(1), trial);
    Tensor<float> img({2, 3, 32, 32});
    for (auto& v : img.data()) v = u(rng);
    auto t = sdt::sfr_trace(m, img);
    ASSERT_EQ(t.sites.size(), sdt::trace_sites(m.config).size());
    for (const auto& s : t.sites) {
      ASSERT_GE(s.average, 0.0);
      ASSERT_LE(s.average, 1.0);
      for (double r : s.per_step) ASSERT_TRUE(r >= 0.0 && r <= 1.0);
    }
  }
}

TEST(SfrTrace, ForcedHalfOnSdsaInput) {
  auto m = sdt::build_model(tiny(1), 2);
  m.sps[3].bn.gamma.value.fill(0.0f);
  m.rpe_bn.gamma.value.fill(0.0f);
  for (std::size_t c = 0; c < 8; ++c) m.rpe_bn.beta.value[c] = c % 2 ? 2.0f : -5.0f;
  Tensor<float> img({2, 3, 32, 32}, 0.5f);
  EXPECT_DOUBLE_EQ(sdt::sfr_trace(m, img).rate("block1.sdsa.input"), 0.5);
}

TEST(SfrTrace, CsvRowsFollowSiteSchema) {
  ModelConfig c = ModelConfig::standard(8, 512);
  auto trace = sdt::uniform_trace(c, 0.1);
  std::ostringstream os;
  sdt::write_trace_csv(os, trace);
  auto rows = parse_csv(os.str());
  ASSERT_EQ(rows.front(), (std::vector<std::string>{"site", "t1", "t2", "t3", "t4", "average"}));
  auto sites = sdt::trace_sites(c);
  ASSERT_EQ(sites.size(), 4u + 8u * 8u + 1u);
  ASSERT_EQ(rows.size(), sites.size() + 1);
  for (std::size_t i = 0; i < sites.size(); ++i) EXPECT_EQ(rows[i + 1][0], sites[i]);
}

TEST(AttentionMap, UniformAndSingleToken) {
  Tensor<float> all({2, 4, 6}, 1.0f);
  auto m = sdt::token_rate_map(all, 2, 2);
  for (double v : m.values) EXPECT_EQ(v, 1.0);
  auto pgm = sdt::heatmap_pgm(m);
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(std::set<char>(pgm.begin() + header.size(), pgm.end()).size(), 1u);

  Tensor<float> one({2, 4, 6});
  one[(1 * 4 + 2) * 6 + 3] = 1.0f;  // t=1, token 2, channel 3
  auto h = sdt::token_rate_map(one, 2, 2);
  EXPECT_GT(h.values[2], 0.0);
  EXPECT_EQ(h.values[0] + h.values[1] + h.values[3], 0.0);
  auto p = sdt::heatmap_pgm(h);
  EXPECT_EQ(static_cast<unsigned char>(p[header.size() + 2]), 255);
  EXPECT_EQ(static_cast<unsigned char>(p[header.size()]), 0);
  EXPECT_THROW(sdt::token_rate_map(one, 3, 2), sdt::ShapeError);
}

TEST(AttentionMap, FullResolutionGeometryAndMaskMonotonicity) {
  ModelConfig c = ModelConfig::standard(1, 16, 2);
  c.timesteps = 2;
  c.num_classes = 4;
  auto m = sdt::build_model(c, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  Tensor<float> img({2, 3, 224, 224});
  for (auto& v : img.data()) v = u(rng);
  auto maps = sdt::attention_maps(m, img);
  ASSERT_EQ(maps.size(), 1u);
  EXPECT_EQ(maps[0].v_s.rows, 14u);
  EXPECT_EQ(maps[0].v_s.cols, 14u);
  EXPECT_LE(maps[0].v_hat.mean(), maps[0].v_s.mean());
}

TEST(Pnm, ReadsBinaryAndAsciiFormats) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p5 = (dir / "sdt_test.pgm").string(), p3 = (dir / "sdt_test.ppm").string();
  {
    std::ofstream f(p5, std::ios::binary);
    f << "P5\n# comment\n2 1\n255\n";
    f.put(static_cast<char>(0));
    f.put(static_cast<char>(255));
  }
  {
    std::ofstream f(p3);
    f << "P3 1 1 4\n4 2 0\n";
  }
  auto g = sdt::read_pnm(p5);
  EXPECT_EQ(g.shape(), (sdt::Shape{1, 1, 2}));
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 1.0f);
  auto c = sdt::read_pnm(p3);
  EXPECT_EQ(c.shape(), (sdt::Shape{3, 1, 1}));
  EXPECT_EQ(c[0], 1.0f);
  EXPECT_EQ(c[1], 0.5f);
  EXPECT_EQ(c[2], 0.0f);
  {
    std::ofstream f(p5);
    f << "BM garbage";
  }
  EXPECT_THROW(sdt::read_pnm(p5), sdt::Error);
  std::filesystem::remove(p5);
  std::filesystem::remove(p3);
}
