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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moegrow/error.hpp"
#include "moegrow/growth.hpp"
#include "moegrow/model.hpp"
#include "moegrow/trainer.hpp"
#include "test_util.hpp"

namespace moegrow {
namespace {

TrainSchedule WarmupConstantAnneal() {
  TrainSchedule s;
  s.max_lr = 3e-4;
  s.warmup_steps = 3000;
  s.constant_steps = 5000;
  s.anneal_steps = 2000;
  s.min_lr_ratio = 0.1;
  return s;
}

TEST(LrSchedule, PointValues) {
  const auto s = WarmupConstantAnneal();
  EXPECT_DOUBLE_EQ(LrAt(s, 0), 0.0);
  EXPECT_DOUBLE_EQ(LrAt(s, 1500), 1.5e-4);
  EXPECT_EQ(LrAt(s, 3000), 3e-4);
  EXPECT_EQ(LrAt(s, 3001), 3e-4);
  EXPECT_EQ(LrAt(s, 7999), 3e-4);
  EXPECT_DOUBLE_EQ(LrAt(s, 9000), 1.65e-4);
  EXPECT_DOUBLE_EQ(LrAt(s, 10000), 3e-5);
  EXPECT_DOUBLE_EQ(LrAt(s, 50000), 3e-5);
}

TEST(LrSchedule, ContinuousAndPiecewiseLinear) {
  const auto s = WarmupConstantAnneal();
  const double slope_up = 3e-4 / 3000, slope_down = 2.7e-4 / 2000;
  for (std::uint64_t t = 0; t < 12000; ++t) {
    const double d = LrAt(s, t + 1) - LrAt(s, t);
    EXPECT_LE(std::abs(d), std::max(slope_up, slope_down) + 1e-15) << t;
    if (t < 3000) EXPECT_NEAR(d, slope_up, 1e-15);
    if (t >= 8000 && t < 10000) EXPECT_NEAR(d, -slope_down, 1e-15);
  }
}

TEST(LrSchedule, ValidateRejectsBadRatio) {
  auto s = WarmupConstantAnneal();
  s.min_lr_ratio = 0.0;
  EXPECT_THROW(s.Validate(), Error);
  s.min_lr_ratio = 1.5;
  EXPECT_THROW(s.Validate(), Error);
}

TensorMap OneParam(std::vector<float> v) {
  const std::size_t n = v.size();
  return {{"w", Tensor({1, n}, std::move(v))}};
}

TEST(AdamW, ZeroGradNoDecayLeavesParams) {
  AdamW opt({0.9, 0.95, 0.0, 1e-8, 1.0});
  auto p = OneParam({1.0f, -2.0f});
  opt.Step(p, {{"w", {0.0f, 0.0f}}}, 1e-2);
  EXPECT_EQ(p.at("w")[0], 1.0f);
  EXPECT_EQ(p.at("w")[1], -2.0f);
}

TEST(AdamW, FirstStepOnQuadraticMovesByLr) {
  // f(w) = w^2/2 at w = 1: g = 1, bias-corrected m = v = 1, step = lr/(1+eps).
  AdamW opt({0.9, 0.95, 0.0, 1e-8, 1.0});
  auto p = OneParam({1.0f});
  const double lr = 1e-3;
  opt.Step(p, {{"w", {1.0f}}}, lr);
  EXPECT_NEAR(p.at("w")[0], 1.0 - lr, 1e-7);
  // Second step: g = w; hand-computed moments.
  const double w1 = p.at("w")[0];
  opt.Step(p, {{"w", {float(w1)}}}, lr);
  const double m = 0.9 * 0.1 + 0.1 * w1, v = 0.95 * 0.05 + 0.05 * w1 * w1;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.9025);
  EXPECT_NEAR(p.at("w")[0], w1 - lr * mhat / (std::sqrt(vhat) + 1e-8), 1e-7);
}

TEST(AdamW, DecoupledDecayShrinksMatricesOnly) {
  AdamW opt({0.9, 0.95, 0.1, 1e-8, 1.0});
  TensorMap p = {{"w", Tensor({1, 2}, {2.0f, -4.0f})}, {"g", Tensor({2}, {2.0f, -4.0f})}};
  opt.Step(p, {{"w", {0.0f, 0.0f}}, {"g", {0.0f, 0.0f}}}, 0.5);
  EXPECT_FLOAT_EQ(p.at("w")[0], 2.0f * (1.0f - 0.05f));
  EXPECT_FLOAT_EQ(p.at("w")[1], -4.0f * (1.0f - 0.05f));
  EXPECT_EQ(p.at("g")[0], 2.0f);
  ASSERT_EQ(opt.moments().at("w").m.size(), 2u);
}

TEST(AdamW, NonFiniteGradientIsTrainingError) {
  AdamW opt;
  auto p = OneParam({1.0f});
  try {
    opt.Step(p, {{"w", {NAN}}}, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  GradMap g = {{"a", {3.0f}}, {"b", {4.0f}}};
  EXPECT_DOUBLE_EQ(ClipGradNorm(g, 1.0), 5.0);
  EXPECT_NEAR(g["a"][0], 0.6, 1e-6);
  EXPECT_NEAR(g["b"][0], 0.8, 1e-6);
  GradMap small = {{"a", {0.3f}}};
  ClipGradNorm(small, 1.0);
  EXPECT_EQ(small["a"][0], 0.3f);
}

RoutingResult MakeRouting(std::size_t n, std::size_t e, std::size_t k,
                          std::vector<float> scores, std::vector<std::uint32_t> sel) {
  RoutingResult r;
  r.n_experts = e;
  r.top_k = k;
  r.selected = std::move(sel);
  r.scores = Tensor({n, e}, std::move(scores));
  return r;
}

TEST(AuxLoss, UniformRoutingGivesEkTimesMeanScore) {
  ModelConfig c;
  c.n_experts = 4;
  c.top_k = 2;
  c.aux_loss_coeff = 0.01;
  // Four tokens, each expert chosen twice (fraction k/E), all scores 0.3:
  // E * sum_i (k/E) * 0.3 = E * k * 0.3 per layer.
  auto r = MakeRouting(4, 4, 2, std::vector<float>(16, 0.3f), {0, 1, 2, 3, 0, 2, 1, 3});
  EXPECT_NEAR(AuxLoss(nullptr, {r, r}, c, 4).item(), 4 * 2 * 0.3 * 0.01, 1e-8);
}

TEST(AuxLoss, CollapseGivesMaximum) {
  ModelConfig c;
  c.n_experts = 4;
  c.top_k = 1;
  c.aux_loss_coeff = 0.01;
  std::vector<float> s(12, 0.0f);
  for (std::size_t t = 0; t < 3; ++t) s[t * 4] = 1.0f;
  auto r = MakeRouting(3, 4, 1, s, {0, 0, 0});
  EXPECT_NEAR(AuxLoss(nullptr, {r}, c, 3).item(), 4 * 0.01, 1e-8);
}

TEST(AuxLoss, PerSequenceVersusGlobalBatch) {
  ModelConfig c;
  c.n_experts = 2;
  c.top_k = 1;
  c.aux_loss_coeff = 1.0;
  // Sequence 1 all to expert 0, sequence 2 all to expert 1.
  auto r = MakeRouting(4, 2, 1, {0.9f, 0.1f, 0.9f, 0.1f, 0.1f, 0.9f, 0.1f, 0.9f},
                       {0, 0, 1, 1});
  // Per sequence: each is collapsed: 2 * (1 * 0.9) = 1.8.
  EXPECT_NEAR(AuxLoss(nullptr, {r}, c, 2).item(), 1.8, 1e-6);
  // Global: fractions 0.5/0.5, mean scores 0.5/0.5 -> 2 * 0.5 = 1.0.
  c.aux_global_batch = true;
  EXPECT_NEAR(AuxLoss(nullptr, {r}, c, 2).item(), 1.0, 1e-6);
}

// Counts active parameters by walking a checkpoint's tensors.
std::uint64_t WalkActiveParams(const Checkpoint& ck) {
  const auto& c = ck.config;
  double total = 0.0;
  for (const auto& [name, t] : ck.tensors) {
    if (name.find("norm") != std::string::npos) continue;
    if (name.find(".experts.") != std::string::npos)
      total += double(t.size()) * double(c.top_k) / double(c.n_experts);
    else
      total += double(t.size());
  }
  return std::uint64_t(std::llround(total));
}

TEST(Flops, MatchesCheckpointWalkOracle) {
  for (bool bias : {false, true}) {
    ModelConfig c;
    c.router_bias = bias;
    const auto ck = InitModel(c, 1);
    EXPECT_EQ(FlopsPerToken(c), 6 * WalkActiveParams(ck));
    EXPECT_EQ(ActiveParams(c), WalkActiveParams(ck));
  }
}

TEST(Flops, LinearUnderDepthAndWidthGrowth) {
  ModelConfig c;
  const auto base = InitModel(c, 1);
  const std::uint64_t outer = 2 * c.vocab * c.d_model;
  const std::uint64_t block = ActiveParams(c) - outer;
  const auto deep = GrowDepth(base, DepthPlan::UniformInterposition(c.n_layers, 2));
  EXPECT_EQ(ActiveParams(deep.config) - outer, 2 * block);
  const auto wide = GrowWidth(base, {2, 0.0, 1});
  const std::uint64_t experts = c.n_layers * c.top_k * 2 * c.d_model * c.d_expert;
  const std::uint64_t router = c.n_layers * c.n_experts * c.d_model;
  EXPECT_EQ(ActiveParams(wide.config), ActiveParams(c) + experts + router);
}

ModelConfig Desk() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_kv_groups = 2;
  c.vocab = 16;
  c.n_experts = 8;
  c.top_k = 2;
  c.d_expert = 32;
  return c;
}

TrainSchedule DeskSchedule() {
  TrainSchedule s;
  s.max_lr = 3e-3;
  s.warmup_steps = 20;
  s.constant_steps = 1000;
  s.batch_size = 8;
  s.seq_len = 32;
  return s;
}

std::vector<std::int32_t> DeskStream(std::uint64_t seed) {
  CorpusSpec spec;
  spec.vocab = 16;
  spec.length = 1 << 16;
  return GenerateCorpus(spec, seed);
}

TEST(TrainRun, ZeroStepsReturnsInputUnchanged) {
  const auto start = InitModel(Desk(), 1);
  const auto stream = DeskStream(1);
  BatchIterator it(stream, 8, 32, 1);
  const auto r = TrainRun(start, it, DeskSchedule(), StopCriterion::Steps(0));
  EXPECT_TRUE(r.log.rows.empty());
  EXPECT_EQ(r.checkpoint.metadata, start.metadata);
  for (const auto& [n, t] : start.tensors) EXPECT_TRUE(t.BitEqual(r.checkpoint.at(n)));
}

TEST(TrainRun, SmoothedLossDecreases) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto stream = DeskStream(seed);
    BatchIterator it(stream, 8, 32, seed);
    auto sched = DeskSchedule();
    sched.max_lr = 1e-3;
    const auto r = TrainRun(InitModel(Desk(), seed), it, sched, StopCriterion::Steps(200));
    ASSERT_EQ(r.log.rows.size(), 200u);
    std::vector<double> windows;
    for (std::size_t w = 0; w < 4; ++w) {
      double s = 0.0;
      for (std::size_t i = w * 50; i < (w + 1) * 50; ++i) s += r.log.rows[i].loss;
      windows.push_back(s / 50);
    }
    for (std::size_t w = 1; w < 4; ++w) EXPECT_LT(windows[w], windows[w - 1]) << seed;
    // Anti-collapse with the balance loss on.
    EXPECT_LT(r.log.rows.back().max_load, 4.0 * 2.0 / 8.0);
  }
}

TEST(TrainRun, FlopsStopHaltsAtFirstStepReachingTarget) {
  const auto start = InitModel(Desk(), 4);
  const auto stream = DeskStream(4);
  BatchIterator it(stream, 8, 32, 4);
  const std::uint64_t per_step = FlopsPerToken(Desk()) * 8 * 32;
  const std::uint64_t target = 5 * per_step + 1;
  const auto r = TrainRun(start, it, DeskSchedule(), StopCriterion::FlopsTarget(target));
  EXPECT_EQ(r.checkpoint.metadata.step, 6u);
  EXPECT_EQ(r.checkpoint.metadata.cumulative_flops, 6 * per_step);
  EXPECT_THROW(TrainRun(start, it, DeskSchedule(), StopCriterion{}), Error);
}

TEST(TrainRun, LedgerAdditiveAcrossGrowth) {
  const auto stream = DeskStream(5);
  BatchIterator it(stream, 8, 32, 5);
  const auto sched = DeskSchedule();
  const auto base = TrainRun(InitModel(Desk(), 5), it, sched, StopCriterion::Steps(3));
  const std::uint64_t sunk = base.checkpoint.metadata.cumulative_flops;
  EXPECT_EQ(sunk, 3 * FlopsPerToken(Desk()) * 8 * 32);
  const auto grown = GrowWidth(GrowDepth(base.checkpoint, DepthPlan::Stack(2)), {2, 0.01, 6});
  EXPECT_EQ(grown.metadata.cumulative_flops, sunk);
  const std::uint64_t per_step = FlopsPerToken(grown.config) * 8 * 32;
  const std::uint64_t extra = 4 * per_step;
  const auto cont = TrainRun(grown, it, sched, StopCriterion::FlopsTarget(sunk + extra));
  EXPECT_EQ(cont.checkpoint.metadata.cumulative_flops, sunk + extra);
  EXPECT_EQ(cont.checkpoint.metadata.growth_history.size(), 2u);
  std::uint64_t prev = sunk;
  for (const auto& row : cont.log.rows) {
    EXPECT_EQ(row.flops, prev + per_step);
    prev = row.flops;
  }
}

TEST(TrainRun, BitReproducible) {
  const auto stream = DeskStream(7);
  auto run = [&] {
    BatchIterator it(stream, 8, 32, 7);
    return TrainRun(InitModel(Desk(), 7), it, DeskSchedule(), StopCriterion::Steps(5));
  };
  const auto a = run(), b = run();
  for (const auto& [n, t] : a.checkpoint.tensors) EXPECT_TRUE(t.BitEqual(b.checkpoint.at(n)));
  for (std::size_t i = 0; i < a.log.rows.size(); ++i)
    EXPECT_EQ(a.log.rows[i].loss, b.log.rows[i].loss);
}

TEST(TrainRun, NonFiniteLossAbortsWithCheckpointReference) {
  auto start = InitModel(Desk(), 8);
  start.metadata.step = 41;
  std::vector<float> huge(start.at("head").size(), 3e38f);
  start.tensors["head"] = Tensor(start.at("head").shape(), huge);
  const auto stream = DeskStream(8);
  BatchIterator it(stream, 8, 32, 8);
  try {
    TrainRun(start, it, DeskSchedule(), StopCriterion::Steps(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 42"), std::string::npos) << msg;
    EXPECT_NE(msg.find("checkpoint is step 41"), std::string::npos) << msg;
  }
}

TEST(TrainLog, CsvHeader) {
  TrainLog log;
  log.rows.push_back({1, 100, 2.5, 1e-3, 0.5});
  EXPECT_EQ(log.ToCsv(), "step,flops,loss,lr,max_load\n1,100,2.5,0.001,0.5\n");
}

}  // namespace
}  // namespace moegrow
