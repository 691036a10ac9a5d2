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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moegrow/config.hpp"
#include "moegrow/corpus.hpp"
#include "moegrow/model.hpp"

namespace moegrow {

/// Warmup (linear 0 -> max), constant, linear anneal to min_lr_ratio * max,
/// then flat at the minimum.
struct TrainSchedule {
  double max_lr = 3e-4;
  std::size_t warmup_steps = 3000;
  std::size_t constant_steps = 0;
  std::size_t anneal_steps = 0;
  double min_lr_ratio = 0.1;
  std::size_t batch_size = 8;
  std::size_t seq_len = 32;

  void Validate() const;
};

double LrAt(const TrainSchedule& schedule, std::uint64_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
};

using GradMap = std::map<std::string, std::vector<float>>;

/// Decoupled-weight-decay Adam with bias correction. Weight decay applies to
/// rank-2 tensors only; norm gains and biases are not decayed.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Replaces every tensor in `params` that has a gradient with its updated
  /// value. Throws ErrorKind::kTraining on a non-finite gradient.
  void Step(TensorMap& params, const GradMap& grads, double lr);

  std::uint64_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

  struct Moments {
    std::vector<float> m, v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamWConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Scales every gradient so the global L2 norm is at most max_norm. Returns
/// the norm before clipping.
double ClipGradNorm(GradMap& grads, double max_norm);

/// Balance loss per layer, averaged over layers and scaled by
/// config.aux_loss_coeff. Statistics are per sequence of `seq_len` tokens,
/// or over the whole batch when config.aux_global_batch.
Tensor AuxLoss(GradTape* tape, const std::vector<RoutingResult>& routing,
               const ModelConfig& config, std::size_t seq_len);

/// Parameters touched per token: embedding, head, attention, router and the
/// k active experts of every layer. Norm gains are not counted.
std::uint64_t ActiveParams(const ModelConfig& config);
/// 6 * ActiveParams (forward + backward).
std::uint64_t FlopsPerToken(const ModelConfig& config);

struct TrainLogRow {
  std::uint64_t step = 0;
  std::uint64_t flops = 0;
  double loss = 0.0;  // language-model cross-entropy of the step's batch
  double lr = 0.0;
  double max_load = 0.0;  // largest per-expert token fraction over layers
};

struct TrainLog {
  std::vector<TrainLogRow> rows;

  /// "step,flops,loss,lr,max_load" header plus one line per row.
  std::string ToCsv() const;
  void WriteCsv(const std::filesystem::path& path) const;
};

/// Exactly one of `steps` or `flops_target` must be set. `flops_target` is an
/// absolute ledger value: training stops at the first step where the
/// checkpoint's cumulative FLOPs reach it.
struct StopCriterion {
  std::optional<std::uint64_t> steps;
  std::optional<std::uint64_t> flops_target;

  static StopCriterion Steps(std::uint64_t n) { return {n, std::nullopt}; }
  static StopCriterion FlopsTarget(std::uint64_t f) { return {std::nullopt, f}; }
};

struct TrainOptions {
  AdamWConfig optimizer;
  std::size_t log_every = 1;
  /// Schedule position of this run's first step. A continued run of the
  /// same schedule passes the checkpoint's step.
  std::uint64_t schedule_offset = 0;
  /// Optional hook called after every step with the updated checkpoint.
  std::function<void(const Checkpoint&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Runs AdamW on cross_entropy + aux_loss with fresh optimizer moments.
/// The input checkpoint is not modified.
TrainResult TrainRun(const Checkpoint& start, BatchIterator& data,
                     const TrainSchedule& schedule, const StopCriterion& stop,
                     const TrainOptions& options = {});

/// Mean cross-entropy over `batches`, forward only.
double EvalLoss(const Checkpoint& ckpt, const std::vector<Batch>& batches);

}  // namespace moegrow
