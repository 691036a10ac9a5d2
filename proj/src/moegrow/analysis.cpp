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

#include "moegrow/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <future>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include "moegrow/checkpoint_io.hpp"
#include "moegrow/error.hpp"

namespace moegrow {

NormProfile ComputeNormProfile(const Checkpoint& ckpt) {
  NormProfile profile;
  for (std::size_t l = 0; l < ckpt.config.n_layers; ++l) {
    const std::string prefix = LayerPrefix(l);
    double sum = 0.0;
    std::size_t count = 0;
    for (auto it = ckpt.tensors.lower_bound(prefix);
         it != ckpt.tensors.end() && it->first.starts_with(prefix); ++it) {
      if (it->second.rank() != 2) continue;
      double sq = 0.0;
      for (float v : it->second.data()) sq += double(v) * v;
      sum += std::sqrt(sq);
      ++count;
    }
    profile.push_back(count ? sum / double(count) : 0.0);
  }
  return profile;
}

namespace {

std::string FormatDouble(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double ParseDouble(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  MOEGROW_CHECK(res.ec == std::errc() && res.ptr == s.data() + s.size(),
                ErrorKind::kFormat, "bad number '" + std::string(s) + "'");
  return v;
}

std::uint64_t ParseU64(std::string_view s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  MOEGROW_CHECK(res.ec == std::errc() && res.ptr == s.data() + s.size(),
                ErrorKind::kFormat, "bad integer '" + std::string(s) + "'");
  return v;
}

constexpr const char* kReportHeader =
    "start_step,sunk_flops,method,extra_flops,final_loss,tail_mean_loss,"
    "heldout_loss";

}  // namespace

std::string NormProfileCsv(const NormProfile& profile) {
  std::string out = "layer_index,norm\n";
  for (std::size_t i = 0; i < profile.size(); ++i)
    out += std::to_string(i) + "," + FormatDouble(profile[i]) + "\n";
  return out;
}

FpDeviation MeasureFpDeviation(const Checkpoint& base, const Checkpoint& grown,
                               const std::vector<Batch>& probes) {
  MOEGROW_CHECK(base.config.vocab == grown.config.vocab, ErrorKind::kArgument,
                "models have different vocabularies (" +
                    std::to_string(base.config.vocab) + " vs " +
                    std::to_string(grown.config.vocab) + ")");
  MOEGROW_CHECK(!probes.empty(), ErrorKind::kArgument,
                "need at least one probe batch");
  double max_abs_diff = 0.0, max_abs_base = 0.0, sum_abs = 0.0;
  std::size_t count = 0;
  double base_loss = 0.0, grown_loss = 0.0;
  for (const auto& b : probes) {
    auto fb = Forward(base, b.inputs, b.batch_size, b.seq_len);
    auto fg = Forward(grown, b.inputs, b.batch_size, b.seq_len);
    for (std::size_t i = 0; i < fb.logits.size(); ++i) {
      const double d = std::abs(double(fg.logits[i]) - double(fb.logits[i]));
      max_abs_diff = std::max(max_abs_diff, d);
      max_abs_base = std::max(max_abs_base, std::abs(double(fb.logits[i])));
      sum_abs += d;
    }
    count += fb.logits.size();
    base_loss += ops::CrossEntropy(nullptr, fb.logits, b.targets).item();
    grown_loss += ops::CrossEntropy(nullptr, fg.logits, b.targets).item();
  }
  FpDeviation out;
  out.max_rel_diff =
      max_abs_diff == 0.0 ? 0.0 : max_abs_diff / std::max(max_abs_base, 1e-30);
  out.mean_abs_diff = sum_abs / double(count);
  out.base_loss = base_loss / double(probes.size());
  out.grown_loss = grown_loss / double(probes.size());
  out.loss_delta = out.grown_loss - out.base_loss;
  return out;
}

std::vector<Batch> RandomProbes(std::size_t vocab, std::size_t n_batches,
                                std::size_t batch_size, std::size_t seq_len,
                                std::uint64_t seed) {
  MOEGROW_CHECK(vocab >= 1 && n_batches >= 1, ErrorKind::kArgument,
                "probe set must be non-empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> pick(0, std::int32_t(vocab) - 1);
  std::vector<Batch> out;
  for (std::size_t b = 0; b < n_batches; ++b) {
    Batch batch;
    batch.batch_size = batch_size;
    batch.seq_len = seq_len;
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::vector<std::int32_t> window(seq_len + 1);
      for (auto& t : window) t = pick(rng);
      batch.inputs.insert(batch.inputs.end(), window.begin(), window.end() - 1);
      batch.targets.insert(batch.targets.end(), window.begin() + 1,
                           window.end());
    }
    out.push_back(std::move(batch));
  }
  return out;
}

Checkpoint GrowthPlan::Apply(const Checkpoint& base) const {
  if (kind == Kind::kWidth) return GrowWidth(base, width);
  const DepthPlan plan =
      depth_method == DepthMethod::kStack
          ? DepthPlan::Stack(depth_factor)
          : DepthPlan::UniformInterposition(base.config.n_layers, depth_factor);
  return GrowDepth(base, plan);
}

std::string GrowthPlan::MethodName() const {
  return kind == Kind::kWidth ? "width" : DepthMethodName(depth_method);
}

void SweepReport::AddRow(SweepRow row) {
  for (const auto& r : rows_)
    MOEGROW_CHECK(!(r.start_step == row.start_step && r.method == row.method),
                  ErrorKind::kArgument,
                  "duplicate report row for start step " +
                      std::to_string(row.start_step) + " / " + row.method);
  MOEGROW_CHECK(row.method.find_first_of(",\n\"") == std::string::npos,
                ErrorKind::kArgument, "method label must be CSV-safe");
  rows_.push_back(std::move(row));
}

std::string SweepReport::ToCsv() const {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows_) {
    out += std::to_string(r.start_step) + "," + std::to_string(r.sunk_flops) +
           "," + r.method + "," + std::to_string(r.extra_flops) + "," +
           FormatDouble(r.final_loss) + "," + FormatDouble(r.tail_mean_loss) +
           "," + FormatDouble(r.heldout_loss) + "\n";
  }
  return out;
}

std::string SweepReport::ToJson() const {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : rows_) {
    rows.push_back(nlohmann::ordered_json{{"start_step", r.start_step},
                                          {"sunk_flops", r.sunk_flops},
                                          {"method", r.method},
                                          {"extra_flops", r.extra_flops},
                                          {"final_loss", r.final_loss},
                                          {"tail_mean_loss", r.tail_mean_loss},
                                          {"heldout_loss", r.heldout_loss}});
  }
  return rows.dump(2) + "\n";
}

SweepReport SweepReport::FromCsv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  MOEGROW_CHECK(std::getline(is, line) && line == kReportHeader,
                ErrorKind::kFormat, "report CSV has an unexpected header");
  SweepReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    MOEGROW_CHECK(cells.size() == 7, ErrorKind::kFormat,
                  "report row needs 7 columns: '" + line + "'");
    report.AddRow({ParseU64(cells[0]), ParseU64(cells[1]), cells[2],
                   ParseU64(cells[3]), ParseDouble(cells[4]),
                   ParseDouble(cells[5]), ParseDouble(cells[6])});
  }
  return report;
}

SweepReport SweepReport::FromJson(const std::string& text) {
  SweepReport report;
  try {
    for (const auto& r : nlohmann::json::parse(text))
      report.AddRow({r.at("start_step").get<std::uint64_t>(),
                     r.at("sunk_flops").get<std::uint64_t>(),
                     r.at("method").get<std::string>(),
                     r.at("extra_flops").get<std::uint64_t>(),
                     r.at("final_loss").get<double>(),
                     r.at("tail_mean_loss").get<double>(),
                     r.at("heldout_loss").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kFormat, std::string("malformed report JSON: ") + e.what());
  }
  return report;
}

void EmitReport(const SweepReport& report, ReportFormat format,
                const std::filesystem::path& path) {
  WriteFileAtomic(path, format == ReportFormat::kCsv ? report.ToCsv()
                                                     : report.ToJson());
}

double TailMeanLoss(const TrainLog& log) {
  if (log.rows.empty()) return 0.0;
  const std::size_t n = log.rows.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 4);
  double s = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) s += log.rows[i].loss;
  return s / double(tail);
}

double SpearmanCorrelation(const std::vector<double>& x,
                           const std::vector<double>& y) {
  MOEGROW_CHECK(x.size() == y.size() && x.size() >= 2, ErrorKind::kArgument,
                "spearman needs two equal-length series of >= 2 values");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * double(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::uint64_t DeriveSeed(std::uint64_t base, std::uint64_t salt) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

struct Leg {
  std::uint64_t start_step = 0;
  bool scratch = false;
  Checkpoint start;
  std::uint64_t sunk = 0;
};

SweepRow RunLeg(const SweepSetup& s, const Leg& leg,
                const std::vector<std::int32_t>& stream,
                const std::vector<Batch>& heldout) {
  const std::uint64_t target =
      s.mode == BudgetMode::kFixedExtra ? leg.sunk + s.budget : s.budget;
  const std::uint64_t salt = leg.scratch ? 0xFFFFFFFFull : leg.start_step;
  BatchIterator data(stream, s.continue_schedule.batch_size,
                     s.continue_schedule.seq_len, DeriveSeed(s.seed, 1000 + salt));
  TrainOptions opts;
  opts.optimizer = s.optimizer;
  opts.log_every = s.log_every;
  auto run = TrainRun(leg.start, data, s.continue_schedule,
                      StopCriterion::FlopsTarget(target), opts);
  SweepRow row;
  row.start_step = leg.start_step;
  row.sunk_flops = leg.sunk;
  row.method = leg.scratch ? "scratch" : s.growth.MethodName();
  row.extra_flops = run.checkpoint.metadata.cumulative_flops - leg.sunk;
  row.final_loss = run.log.rows.empty() ? 0.0 : run.log.rows.back().loss;
  row.tail_mean_loss = TailMeanLoss(run.log);
  row.heldout_loss = EvalLoss(run.checkpoint, heldout);
  return row;
}

}  // namespace

SweepReport RunSunkCostSweep(const SweepSetup& s) {
  MOEGROW_CHECK(!s.start_steps.empty(), ErrorKind::kArgument,
                "sweep needs at least one start step");
  MOEGROW_CHECK(s.budget > 0, ErrorKind::kArgument, "sweep budget must be > 0");
  MOEGROW_CHECK(s.corpus.vocab == s.base_config.vocab, ErrorKind::kArgument,
                "corpus vocab differs from model vocab");
  s.base_config.Validate();
  s.base_schedule.Validate();
  s.continue_schedule.Validate();
  std::set<std::uint64_t> starts(s.start_steps.begin(), s.start_steps.end());
  MOEGROW_CHECK(starts.size() == s.start_steps.size(), ErrorKind::kArgument,
                "duplicate start steps");

  const std::uint64_t base_step_flops = FlopsPerToken(s.base_config) *
                                        s.base_schedule.batch_size *
                                        s.base_schedule.seq_len;
  if (s.mode == BudgetMode::kFixedTotal)
    for (auto st : starts)
      MOEGROW_CHECK(st * base_step_flops < s.budget, ErrorKind::kArgument,
                    "total budget " + std::to_string(s.budget) +
                        " does not exceed the sunk cost of start step " +
                        std::to_string(st));

  const auto stream = GenerateCorpus(s.corpus, DeriveSeed(s.seed, 1));
  CorpusSpec held = s.corpus;
  held.length = s.heldout_tokens;
  const auto heldout = SequentialBatches(
      GenerateCorpus(held, DeriveSeed(s.seed, 2)),
      s.continue_schedule.batch_size, s.continue_schedule.seq_len);

  // Base run with snapshots at each start step.
  std::map<std::uint64_t, Checkpoint> snapshots;
  const Checkpoint init = InitModel(s.base_config, s.seed);
  if (starts.count(0)) snapshots.emplace(0, init);
  const std::uint64_t last = *starts.rbegin();
  if (last > 0) {
    BatchIterator data(stream, s.base_schedule.batch_size,
                       s.base_schedule.seq_len, DeriveSeed(s.seed, 3));
    TrainOptions opts;
    opts.optimizer = s.optimizer;
    opts.log_every = s.log_every;
    opts.on_step = [&](const Checkpoint& c) {
      if (starts.count(c.metadata.step)) snapshots.emplace(c.metadata.step, c);
    };
    TrainRun(init, data, s.base_schedule, StopCriterion::Steps(last), opts);
  }
  for (auto st : starts)
    MOEGROW_CHECK(snapshots.count(st), ErrorKind::kArgument,
                  "no base checkpoint at start step " + std::to_string(st));

  std::vector<Leg> legs;
  {
    const Checkpoint grown_shape = s.growth.Apply(init);
    Leg scratch;
    scratch.scratch = true;
    scratch.start = InitModel(grown_shape.config, DeriveSeed(s.seed, 4));
    legs.push_back(std::move(scratch));
  }
  for (auto st : starts) {
    Leg leg;
    leg.start_step = st;
    leg.start = s.growth.Apply(snapshots.at(st));
    leg.sunk = leg.start.metadata.cumulative_flops;
    legs.push_back(std::move(leg));
  }
  snapshots.clear();

  std::vector<SweepRow> rows(legs.size());
  const std::size_t jobs = std::max<std::size_t>(1, s.jobs);
  for (std::size_t i = 0; i < legs.size(); i += jobs) {
    std::vector<std::future<SweepRow>> pending;
    for (std::size_t j = i; j < std::min(legs.size(), i + jobs); ++j)
      pending.push_back(std::async(jobs == 1 ? std::launch::deferred
                                             : std::launch::async,
                                   [&, j] {
                                     return RunLeg(s, legs[j], stream, heldout);
                                   }));
    for (std::size_t j = 0; j < pending.size(); ++j)
      rows[i + j] = pending[j].get();
  }
  SweepReport report;
  for (auto& r : rows) report.AddRow(std::move(r));
  return report;
}

}  // namespace moegrow
