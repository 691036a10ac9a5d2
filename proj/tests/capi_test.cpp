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

// Exercises the shared library through its C header only.

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "moegrow/moegrow.h"

namespace {

const char* kConfig = R"({
  "seed": 3,
  "model": {"n_layers": 2, "d_model": 16, "n_heads": 2, "n_kv_groups": 1,
            "vocab": 8, "n_experts": 4, "top_k": 2, "d_expert": 16},
  "corpus": {"vocab": 8, "length": 8192},
  "schedule": {"max_lr": 0.003, "warmup_steps": 2, "constant_steps": 100,
               "batch_size": 4, "seq_len": 8},
  "heldout_tokens": 512,
  "sweep": {"growth": {"kind": "depth", "method": "stack", "factor": 2}}
})";

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(mg_run_config_parse(kConfig, &cfg_), MG_OK) << mg_last_error();
    dir_ = std::filesystem::temp_directory_path() /
           ("moegrow_capi_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override {
    mg_run_config_free(cfg_);
    std::filesystem::remove_all(dir_);
  }
  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  mg_run_config* cfg_ = nullptr;
  std::filesystem::path dir_;
};

TEST_F(CApi, ConfigErrorsCarryStatusAndMessage) {
  mg_run_config* c = nullptr;
  EXPECT_EQ(mg_run_config_parse(R"({"seed": 1, "bogus": 2})", &c), MG_ERR_ARGUMENT);
  EXPECT_NE(std::string(mg_last_error()).find("bogus"), std::string::npos);
  EXPECT_EQ(mg_run_config_parse(R"({"model": {}})", &c), MG_ERR_ARGUMENT);
  EXPECT_NE(std::string(mg_last_error()).find("seed"), std::string::npos);
  EXPECT_EQ(mg_run_config_parse("{not json", &c), MG_ERR_ARGUMENT);
  EXPECT_EQ(mg_run_config_parse(R"({"seed": 1, "model": {"n_heads": 3}})", &c),
            MG_ERR_ARGUMENT);
  EXPECT_EQ(c, nullptr);
  EXPECT_EQ(mg_run_config_parse(nullptr, &c), MG_ERR_ARGUMENT);
  EXPECT_STREQ(mg_status_name(MG_ERR_CORRUPTION), "corruption");
  EXPECT_STREQ(mg_status_name(MG_OK), "ok");
}

TEST_F(CApi, TrainGrowSaveLoadPipeline) {
  mg_checkpoint* trained = nullptr;
  ASSERT_EQ(mg_train(cfg_, nullptr, MG_STOP_STEPS, 10, Path("log.csv").c_str(), &trained),
            MG_OK)
      << mg_last_error();
  mg_checkpoint_info info{};
  ASSERT_EQ(mg_checkpoint_get_info(trained, &info), MG_OK);
  EXPECT_EQ(info.step, 10u);
  EXPECT_EQ(info.cumulative_flops, 10 * info.flops_per_token * 32);
  EXPECT_TRUE(std::filesystem::exists(Path("log.csv")));

  mg_checkpoint* deep = nullptr;
  const size_t repeats[] = {1, 2};
  ASSERT_EQ(mg_grow_depth(trained, MG_DEPTH_INTERPOSITION, 0, repeats, 2, &deep), MG_OK);
  mg_checkpoint_info dinfo{};
  mg_checkpoint_get_info(deep, &dinfo);
  EXPECT_EQ(dinfo.n_layers, 3u);
  EXPECT_EQ(dinfo.cumulative_flops, info.cumulative_flops);
  const char *kind = nullptr, *plan = nullptr;
  uint64_t bstep = 0, bflops = 0;
  ASSERT_EQ(mg_checkpoint_growth_event(deep, 0, &kind, &plan, &bstep, &bflops), MG_OK);
  EXPECT_STREQ(kind, "depth");
  EXPECT_EQ(bstep, 10u);
  EXPECT_EQ(mg_checkpoint_growth_event(deep, 1, &kind, &plan, &bstep, &bflops),
            MG_ERR_ARGUMENT);

  ASSERT_EQ(mg_checkpoint_save(deep, Path("deep.ckpt").c_str()), MG_OK);
  mg_checkpoint* loaded = nullptr;
  ASSERT_EQ(mg_checkpoint_load(Path("deep.ckpt").c_str(), &loaded), MG_OK);
  const float *a = nullptr, *b = nullptr;
  size_t na = 0, nb = 0;
  ASSERT_EQ(mg_checkpoint_tensor(deep, "layers.2.attn.wq", &a, &na), MG_OK);
  ASSERT_EQ(mg_checkpoint_tensor(loaded, "layers.1.attn.wq", &b, &nb), MG_OK);
  ASSERT_EQ(na, nb);
  for (size_t i = 0; i < na; ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(mg_checkpoint_tensor(loaded, "nope", &a, &na), MG_ERR_ARGUMENT);

  double profile[8];
  size_t n = 0;
  ASSERT_EQ(mg_norm_profile(loaded, profile, 8, &n), MG_OK);
  ASSERT_EQ(n, 3u);
  EXPECT_EQ(profile[1], profile[2]);

  double loss = 0.0;
  ASSERT_EQ(mg_eval(loaded, cfg_, &loss), MG_OK);
  EXPECT_GT(loss, 0.0);

  mg_checkpoint* resumed = nullptr;
  ASSERT_EQ(mg_train(cfg_, loaded, MG_STOP_EXTRA_FLOPS, 1, nullptr, &resumed), MG_OK);
  mg_checkpoint_info rinfo{};
  mg_checkpoint_get_info(resumed, &rinfo);
  EXPECT_EQ(rinfo.step, 11u);

  for (auto* c : {trained, deep, loaded, resumed}) mg_checkpoint_free(c);
}

TEST_F(CApi, WidthGrowthPreservesFunction) {
  mg_checkpoint* base = nullptr;
  ASSERT_EQ(mg_checkpoint_init(cfg_, &base), MG_OK);
  mg_checkpoint* wide = nullptr;
  ASSERT_EQ(mg_grow_width(base, 2, 0.0, 9, &wide), MG_OK);
  mg_checkpoint_info info{};
  mg_checkpoint_get_info(wide, &info);
  EXPECT_EQ(info.n_experts, 8u);
  EXPECT_EQ(info.top_k, 4u);
  mg_fp_stats s{};
  ASSERT_EQ(mg_fp_deviation(base, wide, 1024, 5, &s), MG_OK);
  EXPECT_LE(s.max_rel_diff, 1e-6);
  EXPECT_EQ(mg_grow_width(base, 0, 0.0, 9, &wide), MG_ERR_ARGUMENT);
  mg_checkpoint_free(base);
  mg_checkpoint_free(wide);
}

TEST_F(CApi, LoadErrorsMapToStatus) {
  mg_checkpoint* c = nullptr;
  EXPECT_EQ(mg_checkpoint_load(Path("missing.ckpt").c_str(), &c), MG_ERR_IO);
  {
    std::FILE* f = std::fopen(Path("bad.ckpt").c_str(), "wb");
    std::fputs("NOTMG", f);
    std::fclose(f);
  }
  EXPECT_EQ(mg_checkpoint_load(Path("bad.ckpt").c_str(), &c), MG_ERR_FORMAT);
  EXPECT_EQ(c, nullptr);
}

TEST_F(CApi, SweepWritesReport) {
  const uint64_t starts[] = {0, 4};
  size_t rows = 0;
  mg_checkpoint* probe = nullptr;
  mg_checkpoint_init(cfg_, &probe);
  mg_checkpoint_info info{};
  mg_checkpoint_get_info(probe, &info);
  mg_checkpoint_free(probe);
  const uint64_t budget = 3 * info.flops_per_token * 32;
  ASSERT_EQ(mg_sweep(cfg_, starts, 2, MG_BUDGET_FIXED_EXTRA, budget, 2,
                     Path("r.json").c_str(), MG_REPORT_JSON, &rows),
            MG_OK)
      << mg_last_error();
  EXPECT_EQ(rows, 3u);
  EXPECT_TRUE(std::filesystem::exists(Path("r.json")));
  EXPECT_EQ(mg_sweep(cfg_, starts, 2, MG_BUDGET_FIXED_TOTAL, 1, 1, Path("t.csv").c_str(),
                     MG_REPORT_CSV, &rows),
            MG_ERR_ARGUMENT);
}

}  // namespace
