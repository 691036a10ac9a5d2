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

#include "moegrow/model.hpp"

#include <algorithm>
#include <random>

#include "moegrow/error.hpp"

namespace moegrow {

LayerParams LayerView(const TensorMap& t, const ModelConfig& c,
                      std::size_t layer) {
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = t.find(name);
    MOEGROW_CHECK(it != t.end(), ErrorKind::kArgument,
                  "missing tensor '" + name + "'");
    return it->second;
  };
  const auto p = LayerPrefix(layer);
  LayerParams lp;
  lp.attn_norm = get(p + "attn_norm");
  lp.wq = get(p + "attn.wq");
  lp.wk = get(p + "attn.wk");
  lp.wv = get(p + "attn.wv");
  lp.wo = get(p + "attn.wo");
  lp.moe_norm = get(p + "moe_norm");
  lp.router_weight = get(p + "router.weight");
  if (c.router_bias) lp.router_bias = get(p + "router.bias");
  lp.up.reserve(c.n_experts);
  lp.down.reserve(c.n_experts);
  for (std::size_t e = 0; e < c.n_experts; ++e) {
    lp.up.push_back(get(ExpertPrefix(layer, e) + "up"));
    lp.down.push_back(get(ExpertPrefix(layer, e) + "down"));
  }
  return lp;
}

double RoutingResult::max_fraction() const {
  return fractions.empty()
             ? 0.0
             : *std::max_element(fractions.begin(), fractions.end());
}

MoeOutput MoeLayerForward(GradTape* tape, const LayerParams& layer,
                          const Tensor& x, const MoeOptions& options) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t e = layer.up.size(), k = options.top_k;
  MOEGROW_CHECK(k >= 1 && k <= e, ErrorKind::kArgument,
                "moe: top_k outside [1, n_experts]");
  Tensor logits = ops::MatMulNT(tape, x, layer.router_weight);
  if (layer.router_bias.defined())
    logits = ops::AddBias(tape, logits, layer.router_bias);
  Tensor scores = ops::Sigmoid(tape, logits);

  RoutingResult routing;
  routing.n_experts = e;
  routing.top_k = k;
  routing.selected.resize(n * k);
  routing.fractions.assign(e, 0.0);
  routing.mean_scores.assign(e, 0.0);
  std::vector<std::vector<std::uint32_t>> tokens_of(e), slots_of(e);
  for (std::size_t t = 0; t < n; ++t) {
    auto row = scores.data().subspan(t * e, e);
    auto top = ops::TopKSelect(row, k);
    for (std::size_t s = 0; s < k; ++s) {
      const auto ex = top.indices[s];
      routing.selected[t * k + s] = ex;
      tokens_of[ex].push_back(std::uint32_t(t));
      slots_of[ex].push_back(std::uint32_t(s));
      routing.fractions[ex] += 1.0;
    }
    for (std::size_t i = 0; i < e; ++i) routing.mean_scores[i] += row[i];
  }
  for (std::size_t i = 0; i < e; ++i) {
    routing.fractions[i] /= double(n);
    routing.mean_scores[i] /= double(n);
  }

  Tensor gates = ops::SelectGates(tape, scores, routing.selected, k,
                                  options.gate_normalize);
  routing.gates.assign(gates.data().begin(), gates.data().end());
  routing.scores = scores;

  std::vector<ops::ExpertContribution> parts;
  for (std::size_t i = 0; i < e; ++i) {
    if (tokens_of[i].empty()) continue;
    Tensor xe = ops::GatherRows(tape, x, tokens_of[i]);
    Tensor hidden = ops::Silu(tape, ops::MatMul(tape, xe, layer.up[i]));
    Tensor out = ops::MatMul(tape, hidden, layer.down[i]);
    parts.push_back({std::move(out), std::move(tokens_of[i]),
                     std::move(slots_of[i])});
  }
  Tensor y = ops::CombineExperts(tape, gates, parts, n, d);
  return {std::move(y), std::move(routing)};
}

Tensor AttentionForward(GradTape* tape, const LayerParams& layer,
                        const Tensor& x, const ModelConfig& c,
                        std::size_t batch, std::size_t seq) {
  const std::size_t rows = batch * seq, dh = c.head_dim();
  std::vector<double> positions(rows);
  for (std::size_t r = 0; r < rows; ++r) positions[r] = double(r % seq);
  const float base = float(c.rope_base);

  Tensor q = ops::MatMul(tape, x, layer.wq).Reshape({rows, c.n_heads, dh});
  Tensor k = ops::MatMul(tape, x, layer.wk).Reshape({rows, c.n_kv_groups, dh});
  Tensor v = ops::MatMul(tape, x, layer.wv);
  q = ops::RopeRotateAt(tape, q, base, positions).Reshape({rows, c.n_heads * dh});
  k = ops::RopeRotateAt(tape, k, base, positions)
          .Reshape({rows, c.n_kv_groups * dh});
  Tensor att = ops::CausalAttention(tape, q, k, v, batch, seq, c.n_heads,
                                    c.n_kv_groups);
  return ops::MatMul(tape, att, layer.wo);
}

BlockOutput BlockForward(GradTape* tape, const LayerParams& layer,
                         const Tensor& h, const ModelConfig& c,
                         std::size_t batch, std::size_t seq) {
  const float eps = float(c.norm_eps);
  const MoeOptions moe{c.top_k, c.gate_normalize};
  if (c.norm_placement == NormPlacement::kPre) {
    Tensor a = AttentionForward(
        tape, layer, ops::RmsNorm(tape, h, layer.attn_norm, eps), c, batch, seq);
    Tensor h1 = ops::Add(tape, h, a);
    auto m = MoeLayerForward(tape, layer,
                             ops::RmsNorm(tape, h1, layer.moe_norm, eps), moe);
    return {ops::Add(tape, h1, m.y), std::move(m.routing)};
  }
  Tensor a = AttentionForward(tape, layer, h, c, batch, seq);
  Tensor h1 = ops::RmsNorm(tape, ops::Add(tape, h, a), layer.attn_norm, eps);
  auto m = MoeLayerForward(tape, layer, h1, moe);
  Tensor h2 = ops::RmsNorm(tape, ops::Add(tape, h1, m.y), layer.moe_norm, eps);
  return {std::move(h2), std::move(m.routing)};
}

ForwardResult Forward(GradTape* tape, const ModelConfig& c,
                      const TensorMap& tensors,
                      std::span<const std::int32_t> tokens, std::size_t batch,
                      std::size_t seq) {
  MOEGROW_CHECK(tokens.size() == batch * seq && !tokens.empty(),
                ErrorKind::kDimension,
                "forward: expected batch*seq = " +
                    std::to_string(batch * seq) + " tokens, got " +
                    std::to_string(tokens.size()));
  for (auto tok : tokens)
    MOEGROW_CHECK(tok >= 0 && std::size_t(tok) < c.vocab, ErrorKind::kArgument,
                  "forward: token " + std::to_string(tok) +
                      " outside vocabulary of " + std::to_string(c.vocab));
  auto get = [&](const char* name) -> const Tensor& {
    auto it = tensors.find(name);
    MOEGROW_CHECK(it != tensors.end(), ErrorKind::kArgument,
                  std::string("missing tensor '") + name + "'");
    return it->second;
  };
  ForwardResult out;
  Tensor h = ops::Embedding(tape, get("embed"), tokens);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto block = BlockForward(tape, LayerView(tensors, c, l), h, c, batch, seq);
    h = std::move(block.h);
    out.routing.push_back(std::move(block.routing));
  }
  if (c.norm_placement == NormPlacement::kPre)
    h = ops::RmsNorm(tape, h, get("final_norm"), float(c.norm_eps));
  out.logits = ops::MatMul(tape, h, get("head"));
  return out;
}

Checkpoint InitModel(const ModelConfig& config, std::uint64_t seed) {
  config.Validate();
  Checkpoint ckpt;
  ckpt.config = config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  for (auto& [name, shape] : ExpectedTensors(config)) {
    const bool is_gain = name.ends_with("_norm");
    const bool is_bias = name.ends_with(".bias");
    std::vector<float> data(NumElements(shape));
    if (is_gain) {
      std::fill(data.begin(), data.end(), 1.0f);
    } else if (!is_bias) {
      for (auto& v : data) v = float(normal(rng));
    }
    ckpt.tensors.emplace(name, Tensor(shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace moegrow
