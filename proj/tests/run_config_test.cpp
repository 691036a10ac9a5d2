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

#include <gtest/gtest.h>

#include <string>

#include "moegrow/error.hpp"
#include "moegrow/run_config.hpp"

namespace moegrow {
namespace {

ErrorKind KindOf(const std::string& text, std::string* message = nullptr) {
  try {
    RunConfig::FromJson(text);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "accepted: " << text;
  return static_cast<ErrorKind>(0);
}

TEST(RunConfig, SeedAloneGivesDefaults) {
  const RunConfig rc = RunConfig::FromJson(R"({"seed": 5})");
  EXPECT_EQ(rc.seed, 5u);
  EXPECT_EQ(rc.model, ModelConfig{});
  EXPECT_EQ(rc.corpus.vocab, rc.model.vocab);
  EXPECT_EQ(rc.continue_schedule.max_lr, rc.schedule.max_lr);
  EXPECT_EQ(rc.sweep_growth.kind, GrowthPlan::Kind::kDepth);
  EXPECT_FALSE(rc.log_csv.has_value());
}

TEST(RunConfig, RejectsMissingSeedAndUnknownKeys) {
  std::string msg;
  EXPECT_EQ(KindOf(R"({"model": {}})", &msg), ErrorKind::kArgument);
  EXPECT_NE(msg.find("seed"), std::string::npos);
  EXPECT_EQ(KindOf(R"({"seed": 1, "schedule": {"lr": 1}})", &msg), ErrorKind::kArgument);
  EXPECT_NE(msg.find("lr"), std::string::npos);
  EXPECT_EQ(KindOf(R"({"seed": 1, "sweep": {"growth": {"kind": "width", "factor": 2}}})"),
            ErrorKind::kArgument);
  EXPECT_EQ(KindOf(R"({"seed": 1, "sweep": {"growth": {"kind": "depth", "alpha": 0.1}}})"),
            ErrorKind::kArgument);
  EXPECT_EQ(KindOf(R"({"seed": 1, "corpus": {"vocab": 7}})"), ErrorKind::kArgument);
  EXPECT_EQ(KindOf(R"({"seed": "one"})"), ErrorKind::kArgument);
  EXPECT_EQ(KindOf("[1, 2]"), ErrorKind::kArgument);
}

TEST(RunConfig, ContinueScheduleInheritsUnsetKeys) {
  const RunConfig rc = RunConfig::FromJson(R"({
    "seed": 1,
    "schedule": {"max_lr": 0.001, "warmup_steps": 10, "batch_size": 4, "seq_len": 16},
    "sweep": {"continue_schedule": {"warmup_steps": 3}}})");
  EXPECT_EQ(rc.continue_schedule.warmup_steps, 3u);
  EXPECT_EQ(rc.continue_schedule.max_lr, 0.001);
  EXPECT_EQ(rc.continue_schedule.batch_size, 4u);
  EXPECT_EQ(rc.continue_schedule.seq_len, 16u);
}

TEST(RunConfig, DataIsDerivedFromSeed) {
  const char* text = R"({"seed": 9, "model": {"vocab": 8}, "corpus": {"vocab": 8,
                        "length": 4096}, "heldout_tokens": 660,
                        "schedule": {"batch_size": 2, "seq_len": 10}})";
  const RunConfig a = RunConfig::FromJson(text), b = RunConfig::FromJson(text);
  EXPECT_EQ(a.TrainStream(), b.TrainStream());
  EXPECT_EQ(a.TrainStream().size(), 4096u);
  const auto held = a.HeldoutBatches();
  ASSERT_EQ(held.size(), 30u);  // 660 tokens / (2 x 11)
  EXPECT_NE(a.DataSeed(0), a.DataSeed(1));
  EXPECT_EQ(a.DataSeed(7), b.DataSeed(7));
}

TEST(RunConfig, MakeSweepCopiesSettings) {
  const RunConfig rc = RunConfig::FromJson(R"({"seed": 3,
      "sweep": {"growth": {"kind": "width", "factor": 2, "alpha": 0.05, "seed": 4}}})");
  const SweepSetup s = rc.MakeSweep({0, 10}, BudgetMode::kFixedTotal, 1000, 2);
  EXPECT_EQ(s.seed, 3u);
  EXPECT_EQ(s.start_steps, (std::vector<std::uint64_t>{0, 10}));
  EXPECT_EQ(s.mode, BudgetMode::kFixedTotal);
  EXPECT_EQ(s.budget, 1000u);
  EXPECT_EQ(s.jobs, 2u);
  EXPECT_EQ(s.growth.kind, GrowthPlan::Kind::kWidth);
  EXPECT_EQ(s.growth.width.alpha, 0.05);
  EXPECT_EQ(s.growth.width.seed, 4u);
}

}  // namespace
}  // namespace moegrow
