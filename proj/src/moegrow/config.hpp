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
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "moegrow/tensor.hpp"

namespace moegrow {

enum class NormPlacement { kPre, kPost };
enum class RouterScore { kSigmoid };

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_kv_groups = 2;
  std::size_t vocab = 32;
  std::size_t n_experts = 8;
  std::size_t top_k = 2;
  std::size_t d_expert = 64;
  NormPlacement norm_placement = NormPlacement::kPre;
  RouterScore router_score = RouterScore::kSigmoid;
  bool router_bias = false;
  bool gate_normalize = true;
  double rope_base = 10000.0;
  double init_std = 0.02;
  double norm_eps = 1e-6;
  double aux_loss_coeff = 0.01;
  /// Balance statistics over the whole batch instead of per sequence.
  bool aux_global_batch = false;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws ErrorKind::kArgument describing the first violated constraint.
  void Validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// One growth operation applied to a checkpoint, recorded for provenance.
struct GrowthEvent {
  std::string kind;  // "depth" or "width"
  std::string plan;  // human-readable plan summary
  std::uint64_t base_step = 0;
  std::uint64_t base_flops = 0;

  bool operator==(const GrowthEvent&) const = default;
};

struct TrainingMetadata {
  std::uint64_t step = 0;
  std::uint64_t cumulative_flops = 0;
  std::vector<GrowthEvent> growth_history;

  bool operator==(const TrainingMetadata&) const = default;
};

using TensorMap = std::map<std::string, Tensor>;

struct Checkpoint {
  ModelConfig config;
  TensorMap tensors;
  TrainingMetadata metadata;

  const Tensor& at(const std::string& name) const;
};

/// Every tensor a config implies with its shape, in a stable order (embed,
/// then layer by layer, then final norm and head). Initialisation draws in
/// this order.
std::vector<std::pair<std::string, Shape>> ExpectedTensors(
    const ModelConfig& config);

std::string LayerPrefix(std::size_t layer);
std::string ExpertPrefix(std::size_t layer, std::size_t expert);

/// Checks that `ckpt` holds exactly the config-implied tensors with the
/// expected shapes.
void ValidateCheckpoint(const Checkpoint& ckpt);

const char* NormPlacementName(NormPlacement p);

nlohmann::json ToJson(const ModelConfig& config);
/// Strict: unknown keys and wrong types are argument errors. Missing keys
/// take defaults.
ModelConfig ModelConfigFromJson(const nlohmann::json& j);

nlohmann::json ToJson(const TrainingMetadata& meta);
TrainingMetadata MetadataFromJson(const nlohmann::json& j);

/// Rejects any key of `j` not in `allowed` (ErrorKind::kArgument).
void RejectUnknownKeys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed,
                       const std::string& where);

}  // namespace moegrow
