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

#include "moegrow/tensor.hpp"

// Differentiable ops. Every op takes an optional tape: with a non-null tape
// and at least one input that requires grad, the op records its backward rule
// and the output requires grad. Passing nullptr evaluates forward only.
// All ops raise ErrorKind::kNumeric instead of returning non-finite values.
namespace moegrow::ops {

/// [m,k] x [k,n] -> [m,n].
Tensor MatMul(GradTape* tape, const Tensor& a, const Tensor& b);
/// [m,k] x [n,k]^T -> [m,n].
Tensor MatMulNT(GradTape* tape, const Tensor& a, const Tensor& b);

Tensor Add(GradTape* tape, const Tensor& a, const Tensor& b);
/// x[..., d] + bias[d], broadcast over leading dimensions.
Tensor AddBias(GradTape* tape, const Tensor& x, const Tensor& bias);
Tensor Scale(GradTape* tape, const Tensor& x, float factor);

Tensor Sigmoid(GradTape* tape, const Tensor& x);
/// x * sigmoid(x).
Tensor Silu(GradTape* tape, const Tensor& x);

/// x / sqrt(mean(x^2) + eps) * gain over the trailing dimension.
Tensor RmsNorm(GradTape* tape, const Tensor& x, const Tensor& gain, float eps);

/// Rotary embedding on x[seq, heads, d_head]; row r sits at position r.
Tensor RopeRotate(GradTape* tape, const Tensor& x, float base);
/// Rotary embedding with an explicit (possibly negative) position per row.
Tensor RopeRotateAt(GradTape* tape, const Tensor& x, float base,
                    std::span<const double> positions);

/// table[V, d] looked up at `tokens` -> [n, d].
Tensor Embedding(GradTape* tape, const Tensor& table,
                 std::span<const std::int32_t> tokens);
/// Rows of x[n, d] -> [rows.size(), d].
Tensor GatherRows(GradTape* tape, const Tensor& x,
                  std::span<const std::uint32_t> rows);

/// Causal grouped-query attention over `batch` independent sequences.
/// q: [batch*seq, n_heads*d_head]; k, v: [batch*seq, n_groups*d_head].
/// Query head h reads key/value head h / (n_heads / n_groups).
Tensor CausalAttention(GradTape* tape, const Tensor& q, const Tensor& k,
                       const Tensor& v, std::size_t batch, std::size_t seq,
                       std::size_t n_heads, std::size_t n_groups);

/// Mean negative log-softmax of the target logits, in nats.
Tensor CrossEntropy(GradTape* tape, const Tensor& logits,
                    std::span<const std::int32_t> targets);

struct TopK {
  std::vector<std::uint32_t> indices;
  std::vector<float> values;
};

/// The k largest scores in descending order; equal scores go to the lower
/// index first.
TopK TopKSelect(std::span<const float> scores, std::size_t k);

/// Gate weights [n, k] taken from scores[n, E] at `selected` (row-major
/// n*k expert ids). When `normalize`, each row is divided by its sum.
Tensor SelectGates(GradTape* tape, const Tensor& scores,
                   std::span<const std::uint32_t> selected, std::size_t k,
                   bool normalize);

/// One expert's share of a mixture: the expert ran on `tokens` and produced
/// `output` rows in the same order; `slots[i]` is the column of gates used
/// for tokens[i].
struct ExpertContribution {
  Tensor output;
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint32_t> slots;
};

/// y[t] = sum over contributions of gates[t, slot] * output[row].
/// Per token, terms are added in ascending slot order.
Tensor CombineExperts(GradTape* tape, const Tensor& gates,
                      std::span<const ExpertContribution> parts,
                      std::size_t n_tokens, std::size_t d_model);

/// Load-balancing loss E * sum_i fraction_i * mean_score_i, averaged over
/// groups of `group_size` consecutive tokens. `selected` holds n*k expert ids;
/// fraction_i counts a group's token assignments to expert i divided by the
/// group's token count. Only the mean scores carry gradient.
Tensor BalanceLoss(GradTape* tape, const Tensor& scores,
                   std::span<const std::uint32_t> selected, std::size_t k,
                   std::size_t group_size);

}  // namespace moegrow::ops
