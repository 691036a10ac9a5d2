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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moegrow/corpus.hpp"
#include "moegrow/growth.hpp"
#include "moegrow/trainer.hpp"

namespace moegrow {

/// Per-layer mean Frobenius norm over the layer's rank-2 tensors.
using NormProfile = std::vector<double>;

NormProfile ComputeNormProfile(const Checkpoint& ckpt);
/// "layer_index,norm" CSV.
std::string NormProfileCsv(const NormProfile& profile);

struct FpDeviation {
  double max_rel_diff = 0.0;   // max |grown - base| / max |base| over logits
  double mean_abs_diff = 0.0;  // mean |grown - base| over logits
  double base_loss = 0.0;
  double grown_loss = 0.0;
  double loss_delta = 0.0;  // grown_loss - base_loss
};

/// Runs both models on the same probe batches and compares logits and loss.
FpDeviation MeasureFpDeviation(const Checkpoint& base, const Checkpoint& grown,
                               const std::vector<Batch>& probes);

/// Uniform random token batches (n_batches x batch_size x seq_len) with
/// next-token targets, for probing models without a corpus.
std::vector<Batch> RandomProbes(std::size_t vocab, std::size_t n_batches,
                                std::size_t batch_size, std::size_t seq_len,
                                std::uint64_t seed);

/// Growth applied at each sweep start point.
struct GrowthPlan {
  enum class Kind { kDepth, kWidth };
  Kind kind = Kind::kDepth;
  DepthMethod depth_method = DepthMethod::kInterposition;
  std::size_t depth_factor = 2;
  WidthPlan width;

  Checkpoint Apply(const Checkpoint& base) const;
  /// Short label used in report rows ("interposition", "stack", "width").
  std::string MethodName() const;
};

enum class BudgetMode { kFixedExtra, kFixedTotal };

struct SweepRow {
  std::uint64_t start_step = 0;
  std::uint64_t sunk_flops = 0;
  std::string method;
  std::uint64_t extra_flops = 0;
  double final_loss = 0.0;
  double tail_mean_loss = 0.0;
  double heldout_loss = 0.0;

  bool operator==(const SweepRow&) const = default;
};

class SweepReport {
 public:
  /// Rows are keyed by (start_step, method); a duplicate key is an argument
  /// error.
  void AddRow(SweepRow row);
  const std::vector<SweepRow>& rows() const { return rows_; }

  std::string ToCsv() const;
  std::string ToJson() const;
  static SweepReport FromCsv(const std::string& text);
  static SweepReport FromJson(const std::string& text);

 private:
  std::vector<SweepRow> rows_;
};

enum class ReportFormat { kCsv, kJson };

void EmitReport(const SweepReport& report, ReportFormat format,
                const std::filesystem::path& path);

struct SweepSetup {
  ModelConfig base_config;
  TrainSchedule base_schedule;
  /// Schedule for every post-growth leg and the scratch row.
  TrainSchedule continue_schedule;
  AdamWConfig optimizer;
  CorpusSpec corpus;
  std::uint64_t seed = 0;
  std::size_t heldout_tokens = 1 << 14;
  std::size_t log_every = 1;
  std::size_t jobs = 1;

  GrowthPlan growth;
  std::vector<std::uint64_t> start_steps;
  BudgetMode mode = BudgetMode::kFixedExtra;
  /// Extra FLOPs per leg (fixed-extra) or total FLOPs (fixed-total).
  std::uint64_t budget = 0;
};

/// Trains the base model once, snapshots it at every start step, grows and
/// continues each snapshot to the budget, and adds a scratch row (sunk 0)
/// trained from a fresh grown-size model. Rows: scratch first, then start
/// steps ascending.
SweepReport RunSunkCostSweep(const SweepSetup& setup);

/// Tail-window mean of a log's loss column: the last 25% of rows (at least
/// one).
double TailMeanLoss(const TrainLog& log);

/// Spearman rank correlation with average ranks for ties.
double SpearmanCorrelation(const std::vector<double>& x,
                           const std::vector<double>& y);

/// Deterministic per-leg seed.
std::uint64_t DeriveSeed(std::uint64_t base, std::uint64_t salt);

}  // namespace moegrow
