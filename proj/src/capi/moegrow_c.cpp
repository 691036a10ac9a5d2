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

#include "moegrow/moegrow.h"

#include <exception>
#include <memory>
#include <new>
#include <string>

#include "moegrow/analysis.hpp"
#include "moegrow/checkpoint_io.hpp"
#include "moegrow/error.hpp"
#include "moegrow/run_config.hpp"

struct mg_checkpoint {
  moegrow::Checkpoint value;
};

struct mg_run_config {
  moegrow::RunConfig value;
};

namespace {

thread_local std::string g_last_error;

mg_status SetError(mg_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

template <typename Fn>
mg_status Guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MG_OK;
  } catch (const moegrow::Error& e) {
    return SetError(static_cast<mg_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return SetError(MG_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return SetError(MG_ERR_INTERNAL, e.what());
  } catch (...) {
    return SetError(MG_ERR_INTERNAL, "unknown error");
  }
}

void Require(const void* p, const char* what) {
  MOEGROW_CHECK(p != nullptr, moegrow::ErrorKind::kArgument,
                std::string(what) + " must not be null");
}

mg_checkpoint* Wrap(moegrow::Checkpoint c) {
  return new mg_checkpoint{std::move(c)};
}

}  // namespace

extern "C" {

const char* mg_last_error(void) { return g_last_error.c_str(); }

const char* mg_status_name(mg_status status) {
  if (status == MG_OK) return "ok";
  if (status == MG_ERR_INTERNAL) return "internal";
  return moegrow::ErrorKindName(static_cast<moegrow::ErrorKind>(status));
}

mg_status mg_run_config_parse(const char* json_text, mg_run_config** out) {
  return Guard([&] {
    Require(json_text, "json_text");
    Require(out, "out");
    *out = new mg_run_config{moegrow::RunConfig::FromJson(json_text)};
  });
}

mg_status mg_run_config_load(const char* path, mg_run_config** out) {
  return Guard([&] {
    Require(path, "path");
    Require(out, "out");
    *out = new mg_run_config{moegrow::RunConfig::Load(path)};
  });
}

void mg_run_config_free(mg_run_config* config) { delete config; }

mg_status mg_checkpoint_init(const mg_run_config* config, mg_checkpoint** out) {
  return Guard([&] {
    Require(config, "config");
    Require(out, "out");
    *out = Wrap(moegrow::InitModel(config->value.model, config->value.seed));
  });
}

mg_status mg_checkpoint_load(const char* path, mg_checkpoint** out) {
  return Guard([&] {
    Require(path, "path");
    Require(out, "out");
    *out = Wrap(moegrow::LoadCheckpoint(path));
  });
}

mg_status mg_checkpoint_save(const mg_checkpoint* ckpt, const char* path) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    Require(path, "path");
    moegrow::SaveCheckpoint(ckpt->value, path);
  });
}

void mg_checkpoint_free(mg_checkpoint* ckpt) { delete ckpt; }

mg_status mg_checkpoint_get_info(const mg_checkpoint* ckpt,
                                 mg_checkpoint_info* out) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    Require(out, "out");
    const auto& c = ckpt->value;
    out->n_layers = c.config.n_layers;
    out->d_model = c.config.d_model;
    out->vocab = c.config.vocab;
    out->n_experts = c.config.n_experts;
    out->top_k = c.config.top_k;
    out->step = c.metadata.step;
    out->cumulative_flops = c.metadata.cumulative_flops;
    out->n_growth_events = c.metadata.growth_history.size();
    out->n_tensors = c.tensors.size();
    out->flops_per_token = moegrow::FlopsPerToken(c.config);
  });
}

mg_status mg_checkpoint_growth_event(const mg_checkpoint* ckpt, size_t index,
                                     const char** kind, const char** plan,
                                     uint64_t* base_step, uint64_t* base_flops) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    const auto& h = ckpt->value.metadata.growth_history;
    MOEGROW_CHECK(index < h.size(), moegrow::ErrorKind::kArgument,
                  "growth event index out of range");
    if (kind) *kind = h[index].kind.c_str();
    if (plan) *plan = h[index].plan.c_str();
    if (base_step) *base_step = h[index].base_step;
    if (base_flops) *base_flops = h[index].base_flops;
  });
}

mg_status mg_checkpoint_tensor(const mg_checkpoint* ckpt, const char* name,
                               const float** data, size_t* n_elements) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    Require(name, "name");
    Require(data, "data");
    Require(n_elements, "n_elements");
    const auto& t = ckpt->value.at(name);
    *data = t.data().data();
    *n_elements = t.size();
  });
}

mg_status mg_grow_depth(const mg_checkpoint* base, mg_depth_method method,
                        size_t factor, const size_t* repeats, size_t n_repeats,
                        mg_checkpoint** out) {
  return Guard([&] {
    Require(base, "base");
    Require(out, "out");
    moegrow::DepthPlan plan;
    if (method == MG_DEPTH_STACK) {
      MOEGROW_CHECK(repeats == nullptr, moegrow::ErrorKind::kArgument,
                    "stack growth takes a factor, not per-layer repeats");
      plan = moegrow::DepthPlan::Stack(factor);
    } else if (method == MG_DEPTH_INTERPOSITION) {
      plan = repeats ? moegrow::DepthPlan::Interposition(
                           std::vector<std::size_t>(repeats, repeats + n_repeats))
                     : moegrow::DepthPlan::UniformInterposition(
                           base->value.config.n_layers, factor);
    } else {
      moegrow::Fail(moegrow::ErrorKind::kArgument, "unknown depth method");
    }
    *out = Wrap(moegrow::GrowDepth(base->value, plan));
  });
}

mg_status mg_grow_width(const mg_checkpoint* base, size_t factor, double alpha,
                        uint64_t seed, mg_checkpoint** out) {
  return Guard([&] {
    Require(base, "base");
    Require(out, "out");
    *out = Wrap(moegrow::GrowWidth(base->value, {factor, alpha, seed}));
  });
}

mg_status mg_norm_profile(const mg_checkpoint* ckpt, double* out,
                          size_t capacity, size_t* n_layers) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    Require(n_layers, "n_layers");
    const auto profile = moegrow::ComputeNormProfile(ckpt->value);
    *n_layers = profile.size();
    if (out)
      for (size_t i = 0; i < profile.size() && i < capacity; ++i)
        out[i] = profile[i];
  });
}

mg_status mg_norm_profile_write_csv(const mg_checkpoint* ckpt,
                                    const char* path) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    Require(path, "path");
    moegrow::WriteFileAtomic(
        path, moegrow::NormProfileCsv(moegrow::ComputeNormProfile(ckpt->value)));
  });
}

mg_status mg_fp_deviation(const mg_checkpoint* base, const mg_checkpoint* grown,
                          size_t n_probe_tokens, uint64_t seed,
                          mg_fp_stats* out) {
  return Guard([&] {
    Require(base, "base");
    Require(grown, "grown");
    Require(out, "out");
    MOEGROW_CHECK(n_probe_tokens >= 1, moegrow::ErrorKind::kArgument,
                  "need at least one probe token");
    const size_t seq = n_probe_tokens < 32 ? n_probe_tokens : 32;
    const size_t n_seqs = (n_probe_tokens + seq - 1) / seq;
    const auto probes = moegrow::RandomProbes(base->value.config.vocab, n_seqs,
                                              1, seq, seed);
    const auto d = moegrow::MeasureFpDeviation(base->value, grown->value, probes);
    *out = {d.max_rel_diff, d.mean_abs_diff, d.base_loss, d.grown_loss,
            d.loss_delta};
  });
}

mg_status mg_train(const mg_run_config* config, const mg_checkpoint* resume,
                   mg_stop_kind stop_kind, uint64_t stop_value,
                   const char* log_csv, mg_checkpoint** out) {
  return Guard([&] {
    Require(config, "config");
    Require(out, "out");
    const auto& rc = config->value;
    moegrow::Checkpoint start =
        resume ? resume->value : moegrow::InitModel(rc.model, rc.seed);
    MOEGROW_CHECK(start.config.vocab == rc.corpus.vocab,
                  moegrow::ErrorKind::kArgument,
                  "checkpoint vocabulary differs from the corpus vocabulary");
    moegrow::StopCriterion stop;
    if (stop_kind == MG_STOP_STEPS)
      stop = moegrow::StopCriterion::Steps(stop_value);
    else if (stop_kind == MG_STOP_EXTRA_FLOPS)
      stop = moegrow::StopCriterion::FlopsTarget(
          start.metadata.cumulative_flops + stop_value);
    else
      moegrow::Fail(moegrow::ErrorKind::kArgument, "unknown stop kind");

    const auto stream = rc.TrainStream();
    moegrow::BatchIterator data(stream, rc.schedule.batch_size,
                                rc.schedule.seq_len,
                                rc.DataSeed(start.metadata.step));
    moegrow::TrainOptions opts;
    opts.optimizer = rc.optimizer;
    opts.log_every = rc.log_every;
    opts.schedule_offset = resume ? start.metadata.step : 0;
    auto result = moegrow::TrainRun(start, data, rc.schedule, stop, opts);
    if (log_csv)
      result.log.WriteCsv(log_csv);
    else if (rc.log_csv)
      result.log.WriteCsv(*rc.log_csv);
    *out = Wrap(std::move(result.checkpoint));
  });
}

mg_status mg_eval(const mg_checkpoint* ckpt, const mg_run_config* config,
                  double* heldout_loss) {
  return Guard([&] {
    Require(ckpt, "ckpt");
    Require(config, "config");
    Require(heldout_loss, "heldout_loss");
    MOEGROW_CHECK(ckpt->value.config.vocab == config->value.corpus.vocab,
                  moegrow::ErrorKind::kArgument,
                  "checkpoint vocabulary differs from the corpus vocabulary");
    *heldout_loss =
        moegrow::EvalLoss(ckpt->value, config->value.HeldoutBatches());
  });
}

mg_status mg_sweep(const mg_run_config* config, const uint64_t* start_steps,
                   size_t n_starts, mg_budget_mode mode, uint64_t budget,
                   size_t jobs, const char* out_path, mg_report_format format,
                   size_t* n_rows) {
  return Guard([&] {
    Require(config, "config");
    Require(start_steps, "start_steps");
    Require(out_path, "out_path");
    MOEGROW_CHECK(mode == MG_BUDGET_FIXED_EXTRA || mode == MG_BUDGET_FIXED_TOTAL,
                  moegrow::ErrorKind::kArgument, "unknown budget mode");
    MOEGROW_CHECK(format == MG_REPORT_CSV || format == MG_REPORT_JSON,
                  moegrow::ErrorKind::kArgument, "unknown report format");
    auto setup = config->value.MakeSweep(
        std::vector<std::uint64_t>(start_steps, start_steps + n_starts),
        mode == MG_BUDGET_FIXED_EXTRA ? moegrow::BudgetMode::kFixedExtra
                                      : moegrow::BudgetMode::kFixedTotal,
        budget, jobs);
    const auto report = moegrow::RunSunkCostSweep(setup);
    moegrow::EmitReport(report,
                        format == MG_REPORT_CSV ? moegrow::ReportFormat::kCsv
                                                : moegrow::ReportFormat::kJson,
                        out_path);
    if (n_rows) *n_rows = report.rows().size();
  });
}

}  // extern "C"
