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

#include "moegrow/growth.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "moegrow/error.hpp"

namespace moegrow {

const char* DepthMethodName(DepthMethod m) {
  return m == DepthMethod::kInterposition ? "interposition" : "stack";
}

DepthPlan DepthPlan::Interposition(std::vector<std::size_t> repeats) {
  DepthPlan p;
  p.method = DepthMethod::kInterposition;
  p.repeats = std::move(repeats);
  return p;
}

DepthPlan DepthPlan::UniformInterposition(std::size_t n_layers, std::size_t k) {
  return Interposition(std::vector<std::size_t>(n_layers, k));
}

DepthPlan DepthPlan::Stack(std::size_t k) {
  DepthPlan p;
  p.method = DepthMethod::kStack;
  p.factor = k;
  return p;
}

std::vector<std::size_t> DepthPlan::SourceLayers(std::size_t n_layers) const {
  std::vector<std::size_t> src;
  if (method == DepthMethod::kInterposition) {
    MOEGROW_CHECK(repeats.size() == n_layers, ErrorKind::kArgument,
                  "depth plan has " + std::to_string(repeats.size()) +
                      " repeat counts for a " + std::to_string(n_layers) +
                      "-layer model");
    for (std::size_t i = 0; i < n_layers; ++i) {
      MOEGROW_CHECK(repeats[i] >= 1, ErrorKind::kArgument,
                    "repeat counts must be >= 1");
      src.insert(src.end(), repeats[i], i);
    }
  } else {
    MOEGROW_CHECK(factor >= 1, ErrorKind::kArgument,
                  "stack factor must be >= 1");
    for (std::size_t r = 0; r < factor; ++r)
      for (std::size_t i = 0; i < n_layers; ++i) src.push_back(i);
  }
  return src;
}

std::string DepthPlan::Summary() const {
  std::ostringstream os;
  os << DepthMethodName(method);
  if (method == DepthMethod::kStack) {
    os << " factor=" << factor;
  } else {
    os << " repeats=";
    for (std::size_t i = 0; i < repeats.size(); ++i)
      os << (i ? "," : "") << repeats[i];
  }
  return os.str();
}

std::vector<std::size_t> RepeatsForTarget(std::size_t n_layers,
                                          std::size_t target) {
  MOEGROW_CHECK(n_layers >= 1 && target >= n_layers, ErrorKind::kArgument,
                "target layer count must be >= the base layer count");
  const std::size_t k = (target + n_layers - 1) / n_layers;
  std::vector<std::size_t> repeats(n_layers, k);
  std::size_t deficit = k * n_layers - target;
  std::size_t lo = 0, hi = n_layers - 1;
  bool take_low = true;
  while (deficit > 0) {
    const std::size_t i = take_low ? lo++ : hi--;
    --repeats[i];
    --deficit;
    take_low = !take_low;
  }
  return repeats;
}

std::string WidthPlan::Summary() const {
  std::ostringstream os;
  os << "width factor=" << expert_factor << " alpha=" << alpha
     << " seed=" << seed;
  return os.str();
}

Checkpoint GrowDepth(const Checkpoint& base, const DepthPlan& plan) {
  const std::size_t n = base.config.n_layers;
  const auto src = plan.SourceLayers(n);

  Checkpoint out;
  out.config = base.config;
  out.config.n_layers = src.size();
  out.metadata = base.metadata;
  out.metadata.growth_history.push_back(
      {"depth", plan.Summary(), base.metadata.step,
       base.metadata.cumulative_flops});

  for (const auto& [name, t] : base.tensors)
    if (!name.starts_with("layers.")) out.tensors.emplace(name, t.Clone());
  for (std::size_t j = 0; j < src.size(); ++j) {
    const std::string from = LayerPrefix(src[j]);
    const std::string to = LayerPrefix(j);
    for (auto it = base.tensors.lower_bound(from);
         it != base.tensors.end() && it->first.starts_with(from); ++it)
      out.tensors.emplace(to + it->first.substr(from.size()), it->second.Clone());
  }
  ValidateCheckpoint(out);
  return out;
}

double PopulationStd(const Tensor& t) {
  if (t.size() == 0) return 0.0;
  double mean = 0.0;
  for (float v : t.data()) mean += v;
  mean /= double(t.size());
  double var = 0.0;
  for (float v : t.data()) var += (v - mean) * (v - mean);
  return std::sqrt(var / double(t.size()));
}

Tensor InjectNoise(const Tensor& t, double alpha, std::mt19937_64& rng) {
  MOEGROW_CHECK(alpha >= 0.0 && std::isfinite(alpha), ErrorKind::kArgument,
                "noise scale alpha must be finite and >= 0");
  const double sigma = alpha * PopulationStd(t);
  if (sigma == 0.0) return t.Clone();
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<float> data(t.data().begin(), t.data().end());
  for (auto& v : data) v = float(double(v) + normal(rng));
  return Tensor(t.shape(), std::move(data));
}

namespace {

// [t; noisy copies...] along the first dimension.
Tensor ConcatRows(const Tensor& t, std::size_t factor, double alpha,
                  std::mt19937_64& rng) {
  std::vector<float> data(t.data().begin(), t.data().end());
  for (std::size_t r = 1; r < factor; ++r) {
    Tensor noisy = InjectNoise(t, alpha, rng);
    data.insert(data.end(), noisy.data().begin(), noisy.data().end());
  }
  Shape shape = t.shape();
  shape[0] *= factor;
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Checkpoint GrowWidth(const Checkpoint& base, const WidthPlan& plan) {
  MOEGROW_CHECK(plan.expert_factor >= 1, ErrorKind::kArgument,
                "expert factor must be >= 1");
  MOEGROW_CHECK(plan.alpha >= 0.0 && std::isfinite(plan.alpha),
                ErrorKind::kArgument, "alpha must be finite and >= 0");
  const auto& c = base.config;
  const std::size_t f = plan.expert_factor, e = c.n_experts;

  Checkpoint out;
  out.config = c;
  out.config.n_experts = f * e;
  out.config.top_k = f * c.top_k;
  out.metadata = base.metadata;
  out.metadata.growth_history.push_back(
      {"width", plan.Summary(), base.metadata.step,
       base.metadata.cumulative_flops});

  std::mt19937_64 rng(plan.seed);
  for (const auto& [name, t] : base.tensors) {
    if (name.find(".experts.") != std::string::npos) continue;
    if (name.ends_with("router.weight") || name.ends_with("router.bias")) continue;
    out.tensors.emplace(name, t.Clone());
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (std::size_t r = 0; r < f; ++r)
      for (std::size_t i = 0; i < e; ++i)
        for (const char* part : {"up", "down"}) {
          const Tensor& src = base.at(ExpertPrefix(l, i) + part);
          out.tensors.emplace(ExpertPrefix(l, r * e + i) + part,
                              r == 0 ? src.Clone()
                                     : InjectNoise(src, plan.alpha, rng));
        }
    const auto p = LayerPrefix(l);
    out.tensors.emplace(p + "router.weight",
                        ConcatRows(base.at(p + "router.weight"), f, plan.alpha,
                                   rng));
    if (c.router_bias)
      out.tensors.emplace(p + "router.bias",
                          ConcatRows(base.at(p + "router.bias"), f,
                                     plan.alpha, rng));
  }
  ValidateCheckpoint(out);
  return out;
}

}  // namespace moegrow
