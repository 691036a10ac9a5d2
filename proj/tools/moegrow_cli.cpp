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

// moegrow command-line tool. Links only the C API.

#include <cinttypes>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moegrow/moegrow.h"

namespace {

struct CheckpointDeleter {
  void operator()(mg_checkpoint* c) const { mg_checkpoint_free(c); }
};
struct ConfigDeleter {
  void operator()(mg_run_config* c) const { mg_run_config_free(c); }
};
using CheckpointPtr = std::unique_ptr<mg_checkpoint, CheckpointDeleter>;
using ConfigPtr = std::unique_ptr<mg_run_config, ConfigDeleter>;

// Single-line error, newlines folded so the output stays machine-parsable.
void PrintError(const std::string& kind, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "error: kind=%s message=%s\n", kind.c_str(),
               message.c_str());
}

struct Failure {
  mg_status status;
};

void Check(mg_status s) {
  if (s != MG_OK) throw Failure{s};
}

CheckpointPtr LoadCheckpoint(const std::string& path) {
  mg_checkpoint* c = nullptr;
  Check(mg_checkpoint_load(path.c_str(), &c));
  return CheckpointPtr(c);
}

ConfigPtr LoadConfig(const std::string& path) {
  mg_run_config* c = nullptr;
  Check(mg_run_config_load(path.c_str(), &c));
  return ConfigPtr(c);
}

struct TrainArgs {
  std::string config, out, resume, log_csv;
  std::uint64_t steps = 0, flops = 0;
};

struct GrowDepthArgs {
  std::string in, out, method;
  std::size_t factor = 0;
  std::vector<std::size_t> repeats;
};

struct GrowWidthArgs {
  std::string in, out;
  std::size_t factor = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
};

struct DiffArgs {
  std::string base, grown;
  std::size_t probes = 1024;
  std::uint64_t seed = 0;
};

struct SweepArgs {
  std::string config, mode, out, format = "auto";
  std::vector<std::uint64_t> starts;
  std::uint64_t budget = 0;
  std::size_t jobs = 1;
};

void RunTrain(const TrainArgs& a, bool by_flops) {
  auto cfg = LoadConfig(a.config);
  CheckpointPtr resume;
  if (!a.resume.empty()) resume = LoadCheckpoint(a.resume);
  mg_checkpoint* out = nullptr;
  Check(mg_train(cfg.get(), resume.get(),
                 by_flops ? MG_STOP_EXTRA_FLOPS : MG_STOP_STEPS,
                 by_flops ? a.flops : a.steps,
                 a.log_csv.empty() ? nullptr : a.log_csv.c_str(), &out));
  CheckpointPtr result(out);
  Check(mg_checkpoint_save(result.get(), a.out.c_str()));
  mg_checkpoint_info info{};
  Check(mg_checkpoint_get_info(result.get(), &info));
  std::printf("step=%" PRIu64 " cumulative_flops=%" PRIu64 "\n", info.step,
              info.cumulative_flops);
}

void RunGrowDepth(const GrowDepthArgs& a) {
  auto base = LoadCheckpoint(a.in);
  const auto method =
      a.method == "stack" ? MG_DEPTH_STACK : MG_DEPTH_INTERPOSITION;
  mg_checkpoint* out = nullptr;
  Check(mg_grow_depth(base.get(), method, a.factor,
                      a.repeats.empty() ? nullptr : a.repeats.data(),
                      a.repeats.size(), &out));
  CheckpointPtr grown(out);
  Check(mg_checkpoint_save(grown.get(), a.out.c_str()));
}

void RunGrowWidth(const GrowWidthArgs& a) {
  auto base = LoadCheckpoint(a.in);
  mg_checkpoint* out = nullptr;
  Check(mg_grow_width(base.get(), a.factor, a.alpha, a.seed, &out));
  CheckpointPtr grown(out);
  Check(mg_checkpoint_save(grown.get(), a.out.c_str()));
}

void RunInspectNorms(const std::string& in, const std::string& out) {
  auto ckpt = LoadCheckpoint(in);
  Check(mg_norm_profile_write_csv(ckpt.get(), out.c_str()));
}

void RunDiff(const DiffArgs& a) {
  auto base = LoadCheckpoint(a.base);
  auto grown = LoadCheckpoint(a.grown);
  mg_fp_stats s{};
  Check(mg_fp_deviation(base.get(), grown.get(), a.probes, a.seed, &s));
  std::printf(
      "max_rel_diff=%.9g mean_abs_diff=%.9g base_loss=%.9g grown_loss=%.9g "
      "loss_delta=%.9g\n",
      s.max_rel_diff, s.mean_abs_diff, s.base_loss, s.grown_loss,
      s.loss_delta);
}

void RunEval(const std::string& in, const std::string& config) {
  auto ckpt = LoadCheckpoint(in);
  auto cfg = LoadConfig(config);
  double loss = 0.0;
  Check(mg_eval(ckpt.get(), cfg.get(), &loss));
  std::printf("heldout_loss=%.9g\n", loss);
}

void RunSweep(const SweepArgs& a) {
  auto cfg = LoadConfig(a.config);
  mg_report_format format = MG_REPORT_CSV;
  if (a.format == "json" ||
      (a.format == "auto" && a.out.size() >= 5 &&
       a.out.compare(a.out.size() - 5, 5, ".json") == 0))
    format = MG_REPORT_JSON;
  std::size_t n_rows = 0;
  Check(mg_sweep(cfg.get(), a.starts.data(), a.starts.size(),
                 a.mode == "fixed-total" ? MG_BUDGET_FIXED_TOTAL
                                         : MG_BUDGET_FIXED_EXTRA,
                 a.budget, a.jobs, a.out.c_str(), format, &n_rows));
  std::printf("rows=%zu\n", n_rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts growth toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train or continue a model");
  train_cmd->add_option("--config", train.config, "Run config JSON")
      ->required();
  train_cmd->add_option("--out", train.out, "Output checkpoint")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue");
  train_cmd->add_option("--log-csv", train.log_csv, "Training log CSV");
  auto* steps_opt =
      train_cmd->add_option("--steps", train.steps, "Optimizer steps")
          ->check(CLI::PositiveNumber);
  auto* flops_opt = train_cmd->add_option(
      "--flops", train.flops, "Additional training FLOPs")
      ->check(CLI::PositiveNumber);
  steps_opt->excludes(flops_opt);
  train_cmd->callback([&] {
    if (steps_opt->count() + flops_opt->count() != 1)
      throw CLI::RequiredError("exactly one of --steps or --flops");
  });

  GrowDepthArgs depth;
  auto* depth_cmd =
      app.add_subcommand("grow-depth", "Duplicate layers of a checkpoint");
  depth_cmd->add_option("--in", depth.in)->required();
  depth_cmd->add_option("--out", depth.out)->required();
  auto* factor_opt =
      depth_cmd->add_option("--factor", depth.factor)->check(CLI::PositiveNumber);
  auto* repeats_opt = depth_cmd->add_option("--repeats", depth.repeats)
                          ->delimiter(',')
                          ->expected(1, -1);
  factor_opt->excludes(repeats_opt);
  depth_cmd->add_option("--method", depth.method)
      ->required()
      ->check(CLI::IsMember({"interposition", "stack"}));
  depth_cmd->callback([&] {
    if (factor_opt->empty() == repeats_opt->empty())
      throw CLI::RequiredError("exactly one of --factor or --repeats");
    if (!repeats_opt->empty() && depth.method == "stack")
      throw CLI::ValidationError("--repeats", "requires --method interposition");
  });

  GrowWidthArgs width;
  auto* width_cmd =
      app.add_subcommand("grow-width", "Duplicate experts with noise");
  width_cmd->add_option("--in", width.in)->required();
  width_cmd->add_option("--out", width.out)->required();
  width_cmd->add_option("--factor", width.factor)
      ->required()
      ->check(CLI::PositiveNumber);
  width_cmd->add_option("--alpha", width.alpha)
      ->required()
      ->check(CLI::NonNegativeNumber);
  width_cmd->add_option("--seed", width.seed)->required();

  std::string norms_in, norms_out;
  auto* norms_cmd =
      app.add_subcommand("inspect-norms", "Write the per-layer norm profile");
  norms_cmd->add_option("--in", norms_in)->required();
  norms_cmd->add_option("--out", norms_out)->required();

  DiffArgs diff;
  auto* diff_cmd =
      app.add_subcommand("diff", "Compare logits of two checkpoints");
  diff_cmd->add_option("--base", diff.base)->required();
  diff_cmd->add_option("--grown", diff.grown)
      ->required();
  diff_cmd->add_option("--probes", diff.probes, "Probe tokens")
      ->check(CLI::PositiveNumber);
  diff_cmd->add_option("--seed", diff.seed)->required();

  std::string eval_in, eval_config;
  auto* eval_cmd = app.add_subcommand("eval", "Held-out loss of a checkpoint");
  eval_cmd->add_option("--in", eval_in)->required();
  eval_cmd->add_option("--config", eval_config)
      ->required();

  SweepArgs sweep;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Grow from several start steps and compare");
  sweep_cmd->add_option("--config", sweep.config)
      ->required();
  sweep_cmd->add_option("--starts", sweep.starts)
      ->required()
      ->delimiter(',')
      ->expected(1, -1);
  sweep_cmd->add_option("--mode", sweep.mode)
      ->required()
      ->check(CLI::IsMember({"fixed-extra", "fixed-total"}));
  sweep_cmd->add_option("--budget", sweep.budget, "FLOPs budget")
      ->required()
      ->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--out", sweep.out)->required();
  sweep_cmd->add_option("--format", sweep.format)
      ->check(CLI::IsMember({"auto", "csv", "json"}));
  sweep_cmd->add_option("--jobs", sweep.jobs, "Parallel legs")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    PrintError("usage", e.what());
    return 2;
  }

  try {
    if (*train_cmd) RunTrain(train, flops_opt->count() > 0);
    else if (*depth_cmd) RunGrowDepth(depth);
    else if (*width_cmd) RunGrowWidth(width);
    else if (*norms_cmd) RunInspectNorms(norms_in, norms_out);
    else if (*diff_cmd) RunDiff(diff);
    else if (*eval_cmd) RunEval(eval_in, eval_config);
    else if (*sweep_cmd) RunSweep(sweep);
  } catch (const Failure& f) {
    PrintError(mg_status_name(f.status), mg_last_error());
    return 1;
  }
  return 0;
}
