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

#include "moegrow/run_config.hpp"

#include "moegrow/checkpoint_io.hpp"
#include "moegrow/error.hpp"

namespace moegrow {

using nlohmann::json;

namespace {

template <typename T>
void Take(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  bool ok;
  if constexpr (std::is_same_v<T, bool>)
    ok = it->is_boolean();
  else if constexpr (std::is_unsigned_v<T>)
    ok = it->is_number_unsigned();
  else if constexpr (std::is_floating_point_v<T>)
    ok = it->is_number();
  else
    ok = it->is_string();
  MOEGROW_CHECK(ok, ErrorKind::kArgument,
                where + "." + key + " has the wrong type");
  out = it->get<T>();
}

// Keys absent from `j` keep their value from `base`.
TrainSchedule ScheduleFromJson(const json& j, const std::string& where,
                               TrainSchedule base = {}) {
  RejectUnknownKeys(j,
                    {"max_lr", "warmup_steps", "constant_steps",
                     "anneal_steps", "min_lr_ratio", "batch_size", "seq_len"},
                    where);
  TrainSchedule s = base;
  Take(j, "max_lr", s.max_lr, where);
  Take(j, "warmup_steps", s.warmup_steps, where);
  Take(j, "constant_steps", s.constant_steps, where);
  Take(j, "anneal_steps", s.anneal_steps, where);
  Take(j, "min_lr_ratio", s.min_lr_ratio, where);
  Take(j, "batch_size", s.batch_size, where);
  Take(j, "seq_len", s.seq_len, where);
  s.Validate();
  return s;
}

AdamWConfig OptimizerFromJson(const json& j) {
  const std::string where = "optimizer";
  RejectUnknownKeys(j, {"beta1", "beta2", "weight_decay", "eps", "grad_clip"},
                    where);
  AdamWConfig o;
  Take(j, "beta1", o.beta1, where);
  Take(j, "beta2", o.beta2, where);
  Take(j, "weight_decay", o.weight_decay, where);
  Take(j, "eps", o.eps, where);
  Take(j, "grad_clip", o.grad_clip, where);
  MOEGROW_CHECK(o.beta1 >= 0 && o.beta1 < 1 && o.beta2 >= 0 && o.beta2 < 1,
                ErrorKind::kArgument, "optimizer betas must lie in [0, 1)");
  MOEGROW_CHECK(o.eps > 0 && o.weight_decay >= 0 && o.grad_clip >= 0,
                ErrorKind::kArgument,
                "optimizer eps > 0, weight_decay >= 0, grad_clip >= 0");
  return o;
}

CorpusSpec CorpusFromJson(const json& j) {
  const std::string where = "corpus";
  RejectUnknownKeys(j,
                    {"vocab", "order", "transition_seed", "concentration",
                     "noise", "length"},
                    where);
  CorpusSpec c;
  Take(j, "vocab", c.vocab, where);
  Take(j, "order", c.order, where);
  Take(j, "transition_seed", c.transition_seed, where);
  Take(j, "concentration", c.concentration, where);
  Take(j, "noise", c.noise, where);
  Take(j, "length", c.length, where);
  MOEGROW_CHECK(c.vocab >= 2, ErrorKind::kArgument, "corpus.vocab must be >= 2");
  MOEGROW_CHECK(c.order == 1 || c.order == 2, ErrorKind::kArgument,
                "corpus.order must be 1 or 2");
  return c;
}

GrowthPlan GrowthFromJson(const json& j) {
  const std::string where = "sweep.growth";
  RejectUnknownKeys(j, {"kind", "method", "factor", "alpha", "seed"}, where);
  GrowthPlan g;
  std::string kind = "depth";
  Take(j, "kind", kind, where);
  if (kind == "depth") {
    g.kind = GrowthPlan::Kind::kDepth;
    std::string method = "interposition";
    Take(j, "method", method, where);
    MOEGROW_CHECK(method == "interposition" || method == "stack",
                  ErrorKind::kArgument,
                  where + ".method must be 'interposition' or 'stack'");
    g.depth_method = method == "stack" ? DepthMethod::kStack
                                       : DepthMethod::kInterposition;
    Take(j, "factor", g.depth_factor, where);
    MOEGROW_CHECK(!j.contains("alpha") && !j.contains("seed"),
                  ErrorKind::kArgument,
                  where + ": alpha/seed apply to width growth only");
  } else if (kind == "width") {
    g.kind = GrowthPlan::Kind::kWidth;
    MOEGROW_CHECK(!j.contains("method"), ErrorKind::kArgument,
                  where + ": method applies to depth growth only");
    Take(j, "factor", g.width.expert_factor, where);
    Take(j, "alpha", g.width.alpha, where);
    MOEGROW_CHECK(j.contains("seed"), ErrorKind::kArgument,
                  where + ".seed is required for width growth");
    Take(j, "seed", g.width.seed, where);
  } else {
    Fail(ErrorKind::kArgument, where + ".kind must be 'depth' or 'width'");
  }
  return g;
}

}  // namespace

RunConfig RunConfig::FromJson(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    Fail(ErrorKind::kArgument, std::string("config is not valid JSON: ") +
                                   e.what());
  }
  RejectUnknownKeys(j,
                    {"model", "schedule", "optimizer", "corpus", "seed",
                     "heldout_tokens", "log_every", "log_csv", "sweep"},
                    "config");
  MOEGROW_CHECK(j.contains("seed"), ErrorKind::kArgument,
                "config.seed is required");
  RunConfig rc;
  if (j.contains("model")) rc.model = ModelConfigFromJson(j["model"]);
  if (j.contains("schedule"))
    rc.schedule = ScheduleFromJson(j["schedule"], "schedule");
  if (j.contains("optimizer")) rc.optimizer = OptimizerFromJson(j["optimizer"]);
  if (j.contains("corpus")) rc.corpus = CorpusFromJson(j["corpus"]);
  else rc.corpus.vocab = rc.model.vocab;
  Take(j, "seed", rc.seed, "config");
  Take(j, "heldout_tokens", rc.heldout_tokens, "config");
  Take(j, "log_every", rc.log_every, "config");
  if (j.contains("log_csv")) {
    std::string p;
    Take(j, "log_csv", p, "config");
    rc.log_csv = p;
  }
  rc.continue_schedule = rc.schedule;
  if (j.contains("sweep")) {
    const auto& sw = j["sweep"];
    RejectUnknownKeys(sw, {"growth", "continue_schedule"}, "sweep");
    if (sw.contains("growth")) rc.sweep_growth = GrowthFromJson(sw["growth"]);
    if (sw.contains("continue_schedule"))
      rc.continue_schedule =
          ScheduleFromJson(sw["continue_schedule"], "sweep.continue_schedule",
                           rc.schedule);
  }
  MOEGROW_CHECK(rc.corpus.vocab == rc.model.vocab, ErrorKind::kArgument,
                "corpus.vocab must equal model.vocab");
  return rc;
}

RunConfig RunConfig::Load(const std::filesystem::path& path) {
  return FromJson(ReadFileBytes(path));
}

std::vector<std::int32_t> RunConfig::TrainStream() const {
  return GenerateCorpus(corpus, DeriveSeed(seed, 1));
}

std::vector<Batch> RunConfig::HeldoutBatches() const {
  CorpusSpec held = corpus;
  held.length = heldout_tokens;
  return SequentialBatches(GenerateCorpus(held, DeriveSeed(seed, 2)),
                           schedule.batch_size, schedule.seq_len);
}

std::uint64_t RunConfig::DataSeed(std::uint64_t start_step) const {
  return DeriveSeed(DeriveSeed(seed, 3), start_step);
}

SweepSetup RunConfig::MakeSweep(std::vector<std::uint64_t> starts,
                                BudgetMode mode, std::uint64_t budget,
                                std::size_t jobs) const {
  SweepSetup s;
  s.base_config = model;
  s.base_schedule = schedule;
  s.continue_schedule = continue_schedule;
  s.optimizer = optimizer;
  s.corpus = corpus;
  s.seed = seed;
  s.heldout_tokens = heldout_tokens;
  s.log_every = log_every;
  s.jobs = jobs;
  s.growth = sweep_growth;
  s.start_steps = std::move(starts);
  s.mode = mode;
  s.budget = budget;
  return s;
}

}  // namespace moegrow
