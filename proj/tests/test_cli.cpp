// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

// Drives the spikedriven binary end to end.

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" SDT_CLI_PATH "' " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

/// First number following `label` in `text`.
double number_after(const std::string& text, const std::string& label) {
  const auto pos = text.find(label);
  if (pos == std::string::npos) throw std::runtime_error("missing '" + label + "' in:\n" + text);
  return std::stod(text.substr(pos + label.size()));
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("sdt_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

const char* kToy =
    "model:\n"
    "  timesteps: 2\n"
    "  blocks: 1\n"
    "  channels: 8\n"
    "  heads: 1\n"
    "  height: 32\n"
    "  width: 32\n"
    "  num_classes: 4\n"
    "train:\n"
    "  epochs: 3\n"
    "  batch_size: 16\n"
    "  samples_per_class: 10\n";

}  // namespace

TEST_F(Cli, ParamsReferenceScale) {
  spit(dir_ / "m.yaml", "model:\n  blocks: 8\n  channels: 512\n");
  const Result r = run("params --config m.yaml", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  const double n = number_after(r.out, "parameters: ");
  EXPECT_NEAR(n / 1e6, 29.68, 0.05 * 29.68);
  EXPECT_NE(r.out.find("M)"), std::string::npos);
}

TEST_F(Cli, ParamsToyHandSum) {
  spit(dir_ / "toy.yaml", kToy);
  const Result r = run("params --config toy.yaml", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  // SPS channels 1,2,4,8; convs carry no bias, each BN has weight and bias.
  const long sps = (27 * 1 + 2 * 1) + (9 * 1 * 2 + 2 * 2) + (9 * 2 * 4 + 2 * 4) +
                   (9 * 4 * 8 + 2 * 8) + (9 * 8 * 8 + 2 * 8);
  // q, k, v, proj: 8x8 + BN(8); mlp 8->32->8 each followed by BN.
  const long block = 4 * (64 + 16) + (8 * 32 + 2 * 32) + (32 * 8 + 2 * 8);
  const long head = 8 * 4 + 4;
  EXPECT_EQ(static_cast<long>(number_after(r.out, "parameters: ")), sps + block + head);
}

TEST_F(Cli, UnknownKeyNamesPathAndLine) {
  spit(dir_ / "bad.yaml", "model:\n  blocks: 1\n  chanels: 8\n");
  const Result r = run("params --config bad.yaml", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("bad.yaml:3"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("model.chanels"), std::string::npos) << r.out;
}

TEST_F(Cli, MalformedYamlAndBadValue) {
  spit(dir_ / "a.yaml", "model:\n  blocks: [1\n");
  Result r = run("params --config a.yaml", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("a.yaml:"), std::string::npos) << r.out;
  spit(dir_ / "b.yaml", "train:\n  lr_schedule: linear\n");
  r = run("params --config b.yaml", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("train.lr_schedule"), std::string::npos) << r.out;
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("", dir_).code, 1);
  EXPECT_EQ(run("frobnicate", dir_).code, 1);
  EXPECT_EQ(run("params --no-such-flag", dir_).code, 1);
  EXPECT_EQ(run("params --config missing.yaml", dir_).code, 1);
}

TEST_F(Cli, DefaultsRoundTrip) {
  const Result r = run("defaults", dir_);
  ASSERT_EQ(r.code, 0);
  for (const char* key : {"model:", "train:", "profile:", "io:", "timesteps: 4", "channels: 512",
                          "e_mac: 4.6", "e_ac: 0.9", "u_th: 1", "beta: 0.5"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  // The printed defaults are themselves a valid config.
  spit(dir_ / "d.yaml", r.out);
  const Result again = run("defaults --config d.yaml", dir_);
  EXPECT_EQ(again.code, 0);
  EXPECT_EQ(again.out, r.out);
}

TEST_F(Cli, TrainSmoke) {
  spit(dir_ / "toy.yaml", kToy);
  const Result r = run("train --config toy.yaml --out run", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "run/checkpoint.sdtf"));
  const auto log = lines(slurp(dir_ / "run/train_log.csv"));
  ASSERT_FALSE(log.empty());
  EXPECT_EQ(log.front(), "step,epoch,loss,lr,accuracy");
  // 40 samples in batches of 16 -> 3 steps per epoch.
  EXPECT_EQ(log.size(), 1u + 3 * 3);
  EXPECT_NE(r.out.find("train accuracy:"), std::string::npos);
}

TEST_F(Cli, ResumeMatchesContinuousRun) {
  spit(dir_ / "toy.yaml", kToy);
  ASSERT_EQ(run("train --config toy.yaml --out full --no-timestamps", dir_).code, 0);
  ASSERT_EQ(run("train --config toy.yaml --out part --no-timestamps --stop-after 1", dir_).code, 0);
  EXPECT_EQ(lines(slurp(dir_ / "part/train_log.csv")).size(), 1u + 3);
  const Result r = run("train --config toy.yaml --out part --checkpoint part/checkpoint.sdtf", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("resuming at epoch 1, step 3"), std::string::npos) << r.out;
  EXPECT_EQ(slurp(dir_ / "part/train_log.csv"), slurp(dir_ / "full/train_log.csv"));
  EXPECT_EQ(slurp(dir_ / "part/checkpoint.sdtf"), slurp(dir_ / "full/checkpoint.sdtf"));
}

TEST_F(Cli, ResumeRejectsOtherModel) {
  spit(dir_ / "toy.yaml", kToy);
  ASSERT_EQ(run("train --config toy.yaml --out a --stop-after 1", dir_).code, 0);
  spit(dir_ / "wide.yaml", std::regex_replace(std::string(kToy), std::regex("channels: 8"),
                                              "channels: 16"));
  EXPECT_EQ(run("train --config wide.yaml --out a --checkpoint a/checkpoint.sdtf", dir_).code, 1);
  EXPECT_EQ(run("profile --config wide.yaml --out p --checkpoint a/checkpoint.sdtf", dir_).code, 1);
}

TEST_F(Cli, DeterministicOutputs) {
  spit(dir_ / "toy.yaml", kToy);
  for (const char* o : {"x", "y"}) {
    ASSERT_EQ(run(std::string("train --config toy.yaml --no-timestamps --out ") + o, dir_).code, 0);
    ASSERT_EQ(run(std::string("profile --config toy.yaml --no-timestamps --out ") + o +
                      "/prof --checkpoint x/checkpoint.sdtf",
                  dir_).code,
              0);
  }
  for (const char* f : {"checkpoint.sdtf", "train_log.csv", "prof/energy.csv",
                        "prof/energy_ann.csv", "prof/sfr_trace.csv"})
    EXPECT_EQ(slurp(dir_ / "x" / f), slurp(dir_ / "y" / f)) << f;
}

TEST_F(Cli, TimestampsOnlyInHeaders) {
  spit(dir_ / "toy.yaml", kToy);
  ASSERT_EQ(run("profile --config toy.yaml --out t", dir_).code, 0);
  ASSERT_EQ(run("profile --config toy.yaml --out n --no-timestamps", dir_).code, 0);
  const std::string with = slurp(dir_ / "t/energy.csv");
  EXPECT_NE(with.find("# generated "), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "n/energy.csv").find("generated"), std::string::npos);
  auto body = [](const std::string& s) {
    std::string out;
    for (const auto& l : lines(s))
      if (l.empty() || l[0] != '#') out += l + "\n";
    return out;
  };
  EXPECT_EQ(body(with), body(slurp(dir_ / "n/energy.csv")));
}

TEST_F(Cli, ProfilePrintsReferenceE1) {
  spit(dir_ / "m.yaml", "model:\n  blocks: 8\n  channels: 384\n");
  const Result r = run("profile --config m.yaml --zero-rates --out p", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  const double e1 = number_after(r.out, "(N=196, D=384): ");
  EXPECT_NEAR(e1, 6.7e8, 0.05 * 6.7e8);
  EXPECT_NE(r.out.find("random weights"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "p/energy.csv").find("# weights: random"), std::string::npos);
}

TEST_F(Cli, ZeroRatesGiveZeroSpikeTotal) {
  spit(dir_ / "toy.yaml", kToy);
  const Result r = run("profile --config toy.yaml --zero-rates --out p", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(number_after(r.out, "spike-driven model total: "), 0.0);
  EXPECT_GT(number_after(r.out, "non-spiking counterpart total: "), 0.0);
  const auto rows = lines(slurp(dir_ / "p/energy.csv"));
  EXPECT_EQ(rows.back(), "TOTAL,,0,0,,,0");
}

TEST_F(Cli, TraceRowsFollowSiteSchema) {
  spit(dir_ / "m.yaml",
       "model:\n  timesteps: 2\n  blocks: 8\n  channels: 16\n  heads: 2\n  height: 32\n"
       "  width: 32\n  num_classes: 4\nprofile:\n  samples: 2\n");
  const Result r = run("profile --config m.yaml --out p --no-timestamps", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  std::vector<std::string> expected = {"sps.conv1", "sps.conv2", "sps.conv3", "sps.conv4"};
  for (int l = 1; l <= 8; ++l) {
    const std::string b = "block" + std::to_string(l);
    for (const char* s : {".sdsa.input", ".sdsa.v_s", ".sdsa.q_s", ".sdsa.k_s", ".sdsa.g",
                          ".sdsa.output", ".mlp.layer1", ".mlp.layer2"})
      expected.push_back(b + s);
  }
  expected.push_back("head.fc");

  std::vector<std::string> got;
  bool header_seen = false;
  for (const auto& l : lines(slurp(dir_ / "p/sfr_trace.csv"))) {
    if (l.empty() || l[0] == '#') continue;
    if (!header_seen) {
      EXPECT_EQ(l, "site,t1,t2,average");
      header_seen = true;
      continue;
    }
    got.push_back(l.substr(0, l.find(',')));
  }
  EXPECT_EQ(got, expected);
}

TEST_F(Cli, AttentionMapsSmallImage) {
  // Wide enough and trained long enough that V_S is not silent.
  std::string cfg = std::regex_replace(std::string(kToy), std::regex("channels: 8"), "channels: 32");
  cfg = std::regex_replace(cfg, std::regex("heads: 1"), "heads: 2");
  cfg = std::regex_replace(cfg, std::regex("epochs: 3"), "epochs: 6");
  cfg = std::regex_replace(cfg, std::regex("samples_per_class: 10"), "samples_per_class: 20");
  spit(dir_ / "toy.yaml", cfg);
  ASSERT_EQ(run("train --config toy.yaml --out run", dir_).code, 0);
  // Deterministic pseudo-random 32x32 RGB image.
  std::string img = "P6\n32 32\n255\n";
  unsigned x = 12345;
  for (int i = 0; i < 32 * 32 * 3; ++i) {
    x = x * 1103515245u + 12345u;
    img.push_back(static_cast<char>((x >> 16) & 0xFF));
  }
  spit(dir_ / "img.ppm", img);
  const Result r = run("attn --config toy.yaml --checkpoint run/checkpoint.sdtf --image img.ppm --out a",
                    dir_);
  ASSERT_EQ(r.code, 0) << r.out;

  auto read_csv = [](const std::string& text) {
    std::vector<std::vector<double>> m;
    for (const auto& l : lines(text)) {
      if (l.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(l);
      for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::stod(cell));
      m.push_back(row);
    }
    return m;
  };
  auto mean = [](const std::vector<std::vector<double>>& m) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& row : m)
      for (double v : row) s += v, ++n;
    return s / static_cast<double>(n);
  };
  const auto vs = read_csv(slurp(dir_ / "a/attn_block1_v_s.csv"));
  const auto vh = read_csv(slurp(dir_ / "a/attn_block1_v_hat.csv"));
  ASSERT_EQ(vs.size(), 2u);
  ASSERT_EQ(vs[0].size(), 2u);
  ASSERT_EQ(vh.size(), 2u);
  ASSERT_EQ(vh[0].size(), 2u);
  EXPECT_GT(mean(vs), 0.0);
  EXPECT_LE(mean(vh), mean(vs) + 1e-12);

  const std::string pgm = slurp(dir_ / "a/attn_block1_v_s.pgm");
  EXPECT_EQ(pgm.substr(0, 2), "P5");
  EXPECT_EQ(pgm.size(), std::string("P5\n2 2\n255\n").size() + 4);
}

TEST_F(Cli, AttentionRejectsWrongGeometry) {
  spit(dir_ / "toy.yaml", kToy);
  std::string img = "P5\n16 16\n255\n" + std::string(256, '\x80');
  spit(dir_ / "img.pgm", img);
  const Result r = run("attn --config toy.yaml --image img.pgm --out a", dir_);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("img.pgm"), std::string::npos) << r.out;
}

TEST_F(Cli, GradcheckTinyModel) {
  spit(dir_ / "toy.yaml", kToy);
  const Result r = run("gradcheck --config toy.yaml", dir_);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("cosine 1.0"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST_F(Cli, TimestepOverride) {
  spit(dir_ / "toy.yaml", kToy);
  const Result r = run("profile --config toy.yaml --zero-rates --timesteps 1 --out p", dir_);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("T=1"), std::string::npos) << r.out;
}
