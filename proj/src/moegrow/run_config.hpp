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

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "moegrow/analysis.hpp"

namespace moegrow {

/// The JSON document driving the CLI:
///   {"model": {...}, "schedule": {...}, "optimizer": {...},
///    "corpus": {...}, "seed": N, "heldout_tokens": N, "log_every": N,
///    "log_csv": "path", "sweep": {"growth": {...},
///    "continue_schedule": {...}}}
/// Only "seed" is required. Unknown keys anywhere are rejected.
struct RunConfig {
  ModelConfig model;
  TrainSchedule schedule;
  AdamWConfig optimizer;
  CorpusSpec corpus;
  std::uint64_t seed = 0;
  std::size_t heldout_tokens = 1 << 14;
  std::size_t log_every = 1;
  std::optional<std::string> log_csv;

  GrowthPlan sweep_growth;
  TrainSchedule continue_schedule;

  static RunConfig FromJson(const std::string& text);
  static RunConfig Load(const std::filesystem::path& path);

  /// Training stream, held-out batches and the iterator seed, all derived
  /// from `seed`.
  std::vector<std::int32_t> TrainStream() const;
  std::vector<Batch> HeldoutBatches() const;
  std::uint64_t DataSeed(std::uint64_t start_step) const;

  SweepSetup MakeSweep(std::vector<std::uint64_t> starts, BudgetMode mode,
                       std::uint64_t budget, std::size_t jobs) const;
};

}  // namespace moegrow
