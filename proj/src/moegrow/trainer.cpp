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

#include "moegrow/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "moegrow/error.hpp"

namespace moegrow {

void TrainSchedule::Validate() const {
  MOEGROW_CHECK(max_lr > 0.0 && std::isfinite(max_lr), ErrorKind::kArgument,
                "schedule.max_lr must be > 0");
  MOEGROW_CHECK(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0,
                ErrorKind::kArgument, "schedule.min_lr_ratio must be in (0, 1]");
  MOEGROW_CHECK(batch_size >= 1 && seq_len >= 1, ErrorKind::kArgument,
                "schedule batch_size and seq_len must be >= 1");
}

double LrAt(const TrainSchedule& s, std::uint64_t step) {
  const double min_lr = s.max_lr * s.min_lr_ratio;
  if (step < s.warmup_steps)
    return s.max_lr * double(step) / double(s.warmup_steps);
  step -= s.warmup_steps;
  if (step < s.constant_steps) return s.max_lr;
  step -= s.constant_steps;
  if (step < s.anneal_steps)
    return s.max_lr -
           (s.max_lr - min_lr) * double(step) / double(s.anneal_steps);
  return min_lr;
}

void AdamW::Step(TensorMap& params, const GradMap& grads, double lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(steps_));
  const double bc2 = 1.0 - std::pow(b2, double(steps_));
  for (auto& [name, param] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    MOEGROW_CHECK(g.size() == param.size(), ErrorKind::kDimension,
                  "gradient for '" + name + "' has wrong size");
    for (float v : g)
      MOEGROW_CHECK(std::isfinite(v), ErrorKind::kTraining,
                    "non-finite gradient for '" + name + "' at optimizer step " +
                        std::to_string(steps_));
    auto& mom = moments_[name];
    if (mom.m.empty()) {
      mom.m.assign(param.size(), 0.0f);
      mom.v.assign(param.size(), 0.0f);
    }
    const double decay = param.rank() == 2 ? config_.weight_decay : 0.0;
    std::vector<float> w(param.data().begin(), param.data().end());
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = float(b1 * mom.m[i] + (1.0 - b1) * g[i]);
      mom.v[i] = float(b2 * mom.v[i] + (1.0 - b2) * double(g[i]) * g[i]);
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      double wi = double(w[i]) * (1.0 - lr * decay);
      wi -= lr * mhat / (std::sqrt(vhat) + config_.eps);
      w[i] = float(wi);
    }
    param = Tensor(param.shape(), std::move(w));
  }
}

double ClipGradNorm(GradMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads)
    for (float v : g) sq += double(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float scale = float(max_norm / norm);
    for (auto& [_, g] : grads)
      for (auto& v : g) v *= scale;
  }
  return norm;
}

Tensor AuxLoss(GradTape* tape, const std::vector<RoutingResult>& routing,
               const ModelConfig& config, std::size_t seq_len) {
  MOEGROW_CHECK(!routing.empty(), ErrorKind::kArgument,
                "aux loss needs at least one layer of routing");
  Tensor total;
  for (const auto& r : routing) {
    const std::size_t group =
        config.aux_global_batch ? r.n_tokens() : seq_len;
    Tensor l = ops::BalanceLoss(tape, r.scores, r.selected, r.top_k, group);
    total = total.defined() ? ops::Add(tape, total, l) : l;
  }
  return ops::Scale(tape, total,
                    float(config.aux_loss_coeff / double(routing.size())));
}

std::uint64_t ActiveParams(const ModelConfig& c) {
  const std::uint64_t d = c.d_model;
  const std::uint64_t qw = c.n_heads * c.head_dim();
  const std::uint64_t kw = c.n_kv_groups * c.head_dim();
  const std::uint64_t attn = d * qw + 2 * d * kw + qw * d;
  const std::uint64_t router = c.n_experts * d + (c.router_bias ? c.n_experts : 0);
  const std::uint64_t experts = c.top_k * 2 * d * c.d_expert;
  return 2 * c.vocab * d + c.n_layers * (attn + router + experts);
}

std::uint64_t FlopsPerToken(const ModelConfig& c) {
  return 6 * ActiveParams(c);
}

std::string TrainLog::ToCsv() const {
  std::ostringstream os;
  os.precision(9);
  os << "step,flops,loss,lr,max_load\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.flops << ',' << r.loss << ',' << r.lr << ','
       << r.max_load << '\n';
  return os.str();
}

void TrainLog::WriteCsv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  MOEGROW_CHECK(os.good(), ErrorKind::kIo,
                "cannot open '" + path.string() + "' for writing");
  os << ToCsv();
  MOEGROW_CHECK(os.good(), ErrorKind::kIo,
                "write failed for '" + path.string() + "'");
}

TrainResult TrainRun(const Checkpoint& start, BatchIterator& data,
                     const TrainSchedule& schedule, const StopCriterion& stop,
                     const TrainOptions& options) {
  MOEGROW_CHECK(stop.steps.has_value() != stop.flops_target.has_value(),
                ErrorKind::kArgument,
                "exactly one of steps or flops budget must be given");
  schedule.Validate();
  ValidateCheckpoint(start);
  const ModelConfig& cfg = start.config;
  const std::size_t batch = schedule.batch_size, seq = schedule.seq_len;
  const std::uint64_t step_flops = FlopsPerToken(cfg) * batch * seq;

  TrainResult result;
  result.checkpoint.config = cfg;
  result.checkpoint.metadata = start.metadata;
  // Gradients are keyed by storage, so every parameter gets its own buffer.
  for (const auto& [name, t] : start.tensors)
    result.checkpoint.tensors.emplace(name, t.Clone());
  Checkpoint& ckpt = result.checkpoint;

  AdamW opt(options.optimizer);
  const std::size_t log_every = std::max<std::size_t>(1, options.log_every);
  for (std::uint64_t local = 0;; ++local) {
    if (stop.steps && local >= *stop.steps) break;
    if (stop.flops_target && ckpt.metadata.cumulative_flops >= *stop.flops_target)
      break;
    const Batch b = data.Next();
    MOEGROW_CHECK(b.batch_size == batch && b.seq_len == seq,
                  ErrorKind::kArgument,
                  "batch iterator shape does not match the schedule");

    TensorMap params;
    for (const auto& [name, t] : ckpt.tensors) params.emplace(name, t.WithGrad(true));
    GradTape tape;
    ForwardResult fwd;
    Tensor ce, loss;
    try {
      fwd = Forward(&tape, cfg, params, b.inputs, batch, seq);
      ce = ops::CrossEntropy(&tape, fwd.logits, b.targets);
      loss = ce;
      if (cfg.aux_loss_coeff > 0.0)
        loss = ops::Add(&tape, ce, AuxLoss(&tape, fwd.routing, cfg, seq));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      Fail(ErrorKind::kTraining,
           "non-finite loss at step " + std::to_string(ckpt.metadata.step + 1) +
               " (" + e.what() + "); last finite checkpoint is step " +
               std::to_string(ckpt.metadata.step) + " at " +
               std::to_string(ckpt.metadata.cumulative_flops) + " FLOPs");
    }
    tape.Backward(loss);

    GradMap grads;
    for (const auto& [name, p] : params) {
      const auto* g = tape.FindGrad(p);
      grads.emplace(name, g ? *g : std::vector<float>(p.size(), 0.0f));
    }
    ClipGradNorm(grads, options.optimizer.grad_clip);
    const double lr = LrAt(schedule, options.schedule_offset + local);
    opt.Step(ckpt.tensors, grads, lr);

    ckpt.metadata.step += 1;
    ckpt.metadata.cumulative_flops += step_flops;
    if ((local + 1) % log_every == 0) {
      double max_load = 0.0;
      for (const auto& r : fwd.routing)
        max_load = std::max(max_load, r.max_fraction());
      result.log.rows.push_back({ckpt.metadata.step,
                                 ckpt.metadata.cumulative_flops,
                                 double(ce.item()), lr, max_load});
    }
    if (options.on_step) options.on_step(ckpt);
  }
  return result;
}

double EvalLoss(const Checkpoint& ckpt, const std::vector<Batch>& batches) {
  MOEGROW_CHECK(!batches.empty(), ErrorKind::kArgument,
                "evaluation needs at least one batch");
  double total = 0.0;
  for (const auto& b : batches) {
    auto fwd = Forward(ckpt, b.inputs, b.batch_size, b.seq_len);
    total += ops::CrossEntropy(nullptr, fwd.logits, b.targets).item();
  }
  return total / double(batches.size());
}

}  // namespace moegrow
