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
#include <random>
#include <vector>

#include "moegrow/config.hpp"

namespace moegrow {

enum class DepthMethod { kInterposition, kStack };

const char* DepthMethodName(DepthMethod m);

/// Depth growth plan. Interposition repeats layer i in place `repeats[i]`
/// times; stack concatenates `factor` copies of the whole layer sequence.
struct DepthPlan {
  DepthMethod method = DepthMethod::kInterposition;
  std::vector<std::size_t> repeats;  // interposition only
  std::size_t factor = 2;            // stack only

  static DepthPlan Interposition(std::vector<std::size_t> repeats);
  static DepthPlan UniformInterposition(std::size_t n_layers, std::size_t k);
  static DepthPlan Stack(std::size_t k);

  /// Source layer index for every layer of the grown model.
  std::vector<std::size_t> SourceLayers(std::size_t n_layers) const;
  std::string Summary() const;
};

/// Per-layer repeat counts reaching `target` layers from `n_layers`: every
/// layer gets ceil(target/n) copies except a deficit taken one at a time
/// from the outermost layers inwards (first, last, second, second-to-last,
/// ...). 28 -> 54 leaves the first and last layer single.
std::vector<std::size_t> RepeatsForTarget(std::size_t n_layers,
                                          std::size_t target);

struct WidthPlan {
  std::size_t expert_factor = 2;
  double alpha = 0.01;
  std::uint64_t seed = 0;

  std::string Summary() const;
};

Checkpoint GrowDepth(const Checkpoint& base, const DepthPlan& plan);
Checkpoint GrowWidth(const Checkpoint& base, const WidthPlan& plan);

/// Population standard deviation of the entries of t.
double PopulationStd(const Tensor& t);

/// t + Normal(0, (alpha * std(t))^2) elementwise. alpha == 0 or a constant
/// tensor returns a bit-identical copy without consuming randomness.
Tensor InjectNoise(const Tensor& t, double alpha, std::mt19937_64& rng);

}  // namespace moegrow
