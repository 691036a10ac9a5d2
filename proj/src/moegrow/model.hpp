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
#include <span>
#include <vector>

#include "moegrow/config.hpp"
#include "moegrow/ops.hpp"

namespace moegrow {

/// Borrowed view of one transformer block's tensors.
struct LayerParams {
  Tensor attn_norm, wq, wk, wv, wo;
  Tensor moe_norm, router_weight, router_bias;  // router_bias may be empty
  std::vector<Tensor> up, down;                 // one entry per expert
};

LayerParams LayerView(const TensorMap& tensors, const ModelConfig& config,
                      std::size_t layer);

/// Routing decisions of one MoE layer over n tokens.
struct RoutingResult {
  std::size_t n_experts = 0;
  std::size_t top_k = 0;
  std::vector<std::uint32_t> selected;  // n*k, per token in top-k order
  std::vector<float> gates;             // n*k, aligned with `selected`
  std::vector<double> fractions;        // per expert; sums to k
  std::vector<double> mean_scores;      // per expert, over all tokens
  Tensor scores;                        // [n, E] router scores (tracked)

  std::size_t n_tokens() const { return top_k ? selected.size() / top_k : 0; }
  double max_fraction() const;
};

struct MoeOptions {
  std::size_t top_k = 1;
  bool gate_normalize = true;
};

struct MoeOutput {
  Tensor y;
  RoutingResult routing;
};

/// Sigmoid-scored top-k mixture: y = sum_i gate_i * expert_i(x).
MoeOutput MoeLayerForward(GradTape* tape, const LayerParams& layer,
                          const Tensor& x, const MoeOptions& options);

/// Grouped-query self-attention sublayer (projections, rotary, causal mask).
Tensor AttentionForward(GradTape* tape, const LayerParams& layer,
                        const Tensor& x, const ModelConfig& config,
                        std::size_t batch, std::size_t seq);

struct BlockOutput {
  Tensor h;
  RoutingResult routing;
};

/// One residual block. Pre-norm: h + F(norm(h)) per sublayer. Post-norm:
/// norm(h + F(h)) per sublayer. Attention runs first, then the MoE.
BlockOutput BlockForward(GradTape* tape, const LayerParams& layer,
                         const Tensor& h, const ModelConfig& config,
                         std::size_t batch, std::size_t seq);

struct ForwardResult {
  Tensor logits;                      // [batch*seq, vocab]
  std::vector<RoutingResult> routing;  // one per layer
};

/// Full model over `batch` sequences of length `seq` laid out row-major in
/// `tokens`.
ForwardResult Forward(GradTape* tape, const ModelConfig& config,
                      const TensorMap& tensors,
                      std::span<const std::int32_t> tokens, std::size_t batch,
                      std::size_t seq);

inline ForwardResult Forward(const Checkpoint& ckpt,
                             std::span<const std::int32_t> tokens,
                             std::size_t batch, std::size_t seq) {
  return Forward(nullptr, ckpt.config, ckpt.tensors, tokens, batch, seq);
}

/// Fresh checkpoint: weight matrices ~ Normal(0, init_std^2), norm gains 1,
/// router biases 0; step and FLOPs zero.
Checkpoint InitModel(const ModelConfig& config, std::uint64_t seed);

}  // namespace moegrow
