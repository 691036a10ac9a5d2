/*
 * Copyright (c) 2026 The moegrow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Drives the built command-line tool as a subprocess.

#include <gtest/gtest.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;  // stdout
  std::string err;  // stderr
};

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("moegrow_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
    nlohmann::json cfg = {
        {"seed", 11},
        {"model",
         {{"n_layers", 2}, {"d_model", 16}, {"n_heads", 2}, {"n_kv_groups", 1}, {"vocab", 8},
          {"n_experts", 4}, {"top_k", 2}, {"d_expert", 16}}},
        {"corpus", {{"vocab", 8}, {"length", 8192}}},
        {"schedule",
         {{"max_lr", 0.003}, {"warmup_steps", 2}, {"constant_steps", 200}, {"batch_size", 4},
          {"seq_len", 8}}},
        {"heldout_tokens", 512},
        {"sweep", {{"growth", {{"kind", "depth"}, {"method", "stack"}, {"factor", 2}}}}}};
    std::ofstream(P("cfg.json")) << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string P(const std::string& name) const { return (dir_ / name).string(); }

  Result Run(const std::string& args) const {
    const std::string out = P("stdout.txt"), err = P("stderr.txt");
    const std::string cmd =
        std::string(MOEGROW_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = Slurp(out);
    r.err = Slurp(err);
    return r;
  }

  // Lines of stderr; failures must print exactly one.
  static int LineCount(const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
  }

  // Tensor payload after the magic and header.
  static std::string Payload(const std::string& file) {
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= uint32_t(uint8_t(file[5 + i])) << (8 * i);
    return file.substr(9 + len);
  }
  static nlohmann::json Header(const std::string& file) {
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= uint32_t(uint8_t(file[5 + i])) << (8 * i);
    return nlohmann::json::parse(file.substr(9, len));
  }

  fs::path dir_;
};

TEST_F(Cli, EndToEndPipeline) {
  Result r = Run("train --config " + P("cfg.json") + " --out " + P("a.ckpt") +
                 " --steps 40 --log-csv " + P("log.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("step=40"), std::string::npos);
  EXPECT_EQ(Slurp(P("log.csv")).rfind("step,", 0), 0u);
  const std::string a = Slurp(P("a.ckpt"));

  // Factor 1 changes nothing but the growth history.
  r = Run("grow-depth --in " + P("a.ckpt") + " --out " + P("same.ckpt") +
          " --factor 1 --method stack");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string same = Slurp(P("same.ckpt"));
  EXPECT_EQ(Payload(same), Payload(a));
  nlohmann::json ha = Header(a), hs = Header(same);
  ASSERT_EQ(hs["metadata"]["growth_history"].size(), ha["metadata"]["growth_history"].size() + 1);
  hs["metadata"]["growth_history"].erase(hs["metadata"]["growth_history"].size() - 1);
  EXPECT_EQ(ha, hs);

  r = Run("grow-width --in " + P("a.ckpt") + " --out " + P("w.ckpt") +
          " --factor 2 --alpha 0 --seed 1");
  ASSERT_EQ(r.code, 0) << r.err;
  r = Run("diff --base " + P("a.ckpt") + " --grown " + P("w.ckpt") + " --seed 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pos = r.out.find("max_rel_diff=");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LE(std::stod(r.out.substr(pos + 13)), 1e-6);

  r = Run("grow-depth --in " + P("a.ckpt") + " --out " + P("d.ckpt") +
          " --repeats 1,3 --method interposition");
  ASSERT_EQ(r.code, 0) << r.err;
  r = Run("inspect-norms --in " + P("d.ckpt") + " --out " + P("norms.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string norms = Slurp(P("norms.csv"));
  EXPECT_EQ(norms.rfind("layer_index,norm\n", 0), 0u);
  EXPECT_EQ(LineCount(norms), 5);

  r = Run("eval --in " + P("d.ckpt") + " --config " + P("cfg.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("heldout_loss=", 0), 0u);

  r = Run("train --config " + P("cfg.json") + " --resume " + P("d.ckpt") + " --out " +
          P("e.ckpt") + " --steps 3");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("step=43"), std::string::npos);

  // Inputs untouched by every command above.
  EXPECT_EQ(Slurp(P("a.ckpt")), a);
}

TEST_F(Cli, SweepEmitsOneRowPerStartPlusScratch) {
  Result r = Run("train --config " + P("cfg.json") + " --out " + P("a.ckpt") + " --steps 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const uint64_t per_step = std::stoull(r.out.substr(r.out.find("cumulative_flops=") + 17));
  const std::string budget = std::to_string(5 * per_step);
  r = Run("sweep --config " + P("cfg.json") + " --starts 0,10,20 --mode fixed-extra --budget " +
          budget + " --out " + P("r.csv") + " --jobs 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rows=4"), std::string::npos);
  EXPECT_EQ(LineCount(Slurp(P("r.csv"))), 5);
  r = Run("sweep --config " + P("cfg.json") + " --starts 0,10 --mode fixed-extra --budget " +
          budget + " --out " + P("r.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(Slurp(P("r.json"))).size(), 3u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  for (const std::string& args : std::vector<std::string>
       {"", "frobnicate", "train --config " + P("cfg.json") + " --out x --steps 1 --flops 5",
        "train --config " + P("cfg.json") + " --out x",
        "grow-width --in a --out b --factor 2 --alpha 0",
        "diff --base a --grown b", "grow-depth --in a --out b --factor 2 --method sideways",
        "grow-depth --in a --out b --method stack",
        "grow-depth --in a --out b --repeats 1,2 --method stack"}) {
    Result r = Run(args);
    EXPECT_EQ(r.code, 2) << args;
    EXPECT_EQ(LineCount(r.err), 1) << args << ": " << r.err;
    EXPECT_EQ(r.err.rfind("error: kind=usage", 0), 0u) << r.err;
  }
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  Result r = Run("inspect-norms --in " + P("missing.ckpt") + " --out " + P("n.csv"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: kind=io", 0), 0u) << r.err;
  EXPECT_EQ(LineCount(r.err), 1);

  std::ofstream(P("junk.ckpt")) << "garbage";
  r = Run("inspect-norms --in " + P("junk.ckpt") + " --out " + P("n.csv"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: kind=format", 0), 0u) << r.err;

  std::ofstream(P("bad.json")) << R"({"seed": 1, "learning_rate": 0.1})";
  r = Run("train --config " + P("bad.json") + " --out " + P("x.ckpt") + " --steps 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
  EXPECT_EQ(LineCount(r.err), 1);
  EXPECT_FALSE(fs::exists(P("x.ckpt")));
}

}  // namespace
