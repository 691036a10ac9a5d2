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

#include "moegrow/config.hpp"

#include <set>

#include "moegrow/error.hpp"

namespace moegrow {

using nlohmann::json;

void ModelConfig::Validate() const {
  auto require = [](bool ok, const std::string& msg) {
    MOEGROW_CHECK(ok, ErrorKind::kArgument, "invalid model config: " + msg);
  };
  require(n_layers >= 1, "n_layers must be >= 1");
  require(d_model >= 1, "d_model must be >= 1");
  require(n_heads >= 1 && n_kv_groups >= 1, "heads and groups must be >= 1");
  require(n_heads % n_kv_groups == 0,
          "n_heads must be divisible by n_kv_groups");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(head_dim() % 2 == 0, "head dimension must be even for rotary");
  require(vocab >= 2, "vocab must be >= 2");
  require(n_experts >= 1, "n_experts must be >= 1");
  require(top_k >= 1 && top_k <= n_experts, "top_k must lie in [1, n_experts]");
  require(d_expert >= 1, "d_expert must be >= 1");
  require(init_std > 0.0, "init_std must be > 0");
  require(rope_base > 0.0, "rope_base must be > 0");
  require(norm_eps > 0.0, "norm_eps must be > 0");
  require(aux_loss_coeff >= 0.0, "aux_loss_coeff must be >= 0");
}

const Tensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  MOEGROW_CHECK(it != tensors.end(), ErrorKind::kArgument,
                "checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::string LayerPrefix(std::size_t layer) {
  return "layers." + std::to_string(layer) + ".";
}

std::string ExpertPrefix(std::size_t layer, std::size_t expert) {
  return LayerPrefix(layer) + "experts." + std::to_string(expert) + ".";
}

std::vector<std::pair<std::string, Shape>> ExpectedTensors(
    const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t qw = c.n_heads * c.head_dim();
  const std::size_t kw = c.n_kv_groups * c.head_dim();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embed", Shape{c.vocab, d});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto p = LayerPrefix(l);
    out.emplace_back(p + "attn_norm", Shape{d});
    out.emplace_back(p + "attn.wq", Shape{d, qw});
    out.emplace_back(p + "attn.wk", Shape{d, kw});
    out.emplace_back(p + "attn.wv", Shape{d, kw});
    out.emplace_back(p + "attn.wo", Shape{qw, d});
    out.emplace_back(p + "moe_norm", Shape{d});
    out.emplace_back(p + "router.weight", Shape{c.n_experts, d});
    if (c.router_bias) out.emplace_back(p + "router.bias", Shape{c.n_experts});
    for (std::size_t e = 0; e < c.n_experts; ++e) {
      const auto ep = ExpertPrefix(l, e);
      out.emplace_back(ep + "up", Shape{d, c.d_expert});
      out.emplace_back(ep + "down", Shape{c.d_expert, d});
    }
  }
  if (c.norm_placement == NormPlacement::kPre)
    out.emplace_back("final_norm", Shape{d});
  out.emplace_back("head", Shape{d, c.vocab});
  return out;
}

void ValidateCheckpoint(const Checkpoint& ckpt) {
  ckpt.config.Validate();
  const auto expected = ExpectedTensors(ckpt.config);
  for (const auto& [name, shape] : expected) {
    auto it = ckpt.tensors.find(name);
    MOEGROW_CHECK(it != ckpt.tensors.end(), ErrorKind::kCorruption,
                  "missing tensor '" + name + "'");
    MOEGROW_CHECK(it->second.shape() == shape, ErrorKind::kCorruption,
                  "tensor '" + name + "' has shape " +
                      ShapeString(it->second.shape()) + ", expected " +
                      ShapeString(shape));
  }
  MOEGROW_CHECK(ckpt.tensors.size() == expected.size(), ErrorKind::kCorruption,
                "checkpoint holds tensors not implied by its config");
}

const char* NormPlacementName(NormPlacement p) {
  return p == NormPlacement::kPre ? "pre" : "post";
}

void RejectUnknownKeys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  MOEGROW_CHECK(j.is_object(), ErrorKind::kArgument,
                where + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    MOEGROW_CHECK(ok.count(key) != 0, ErrorKind::kArgument,
                  where + ": unknown key '" + key + "'");
}

namespace {

template <typename T>
void Read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if constexpr (std::is_same_v<T, bool>) {
    MOEGROW_CHECK(it->is_boolean(), ErrorKind::kArgument,
                  where + "." + key + " must be a boolean");
  } else if constexpr (std::is_unsigned_v<T>) {
    MOEGROW_CHECK(it->is_number_unsigned(), ErrorKind::kArgument,
                  where + "." + key + " must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    MOEGROW_CHECK(it->is_number(), ErrorKind::kArgument,
                  where + "." + key + " must be a number");
  } else {
    MOEGROW_CHECK(it->is_string(), ErrorKind::kArgument,
                  where + "." + key + " must be a string");
  }
  out = it->get<T>();
}

}  // namespace

json ToJson(const ModelConfig& c) {
  return json{
      {"n_layers", c.n_layers},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"n_kv_groups", c.n_kv_groups},
      {"vocab", c.vocab},
      {"n_experts", c.n_experts},
      {"top_k", c.top_k},
      {"d_expert", c.d_expert},
      {"norm_placement", NormPlacementName(c.norm_placement)},
      {"router_score", "sigmoid"},
      {"router_bias", c.router_bias},
      {"gate_normalize", c.gate_normalize},
      {"rope_base", c.rope_base},
      {"init_std", c.init_std},
      {"norm_eps", c.norm_eps},
      {"aux_loss_coeff", c.aux_loss_coeff},
      {"aux_global_batch", c.aux_global_batch},
  };
}

ModelConfig ModelConfigFromJson(const json& j) {
  const std::string where = "model";
  RejectUnknownKeys(j,
                    {"n_layers", "d_model", "n_heads", "n_kv_groups", "vocab",
                     "n_experts", "top_k", "d_expert", "norm_placement",
                     "router_score", "router_bias", "gate_normalize",
                     "rope_base", "init_std", "norm_eps", "aux_loss_coeff",
                     "aux_global_batch"},
                    where);
  ModelConfig c;
  Read(j, "n_layers", c.n_layers, where);
  Read(j, "d_model", c.d_model, where);
  Read(j, "n_heads", c.n_heads, where);
  Read(j, "n_kv_groups", c.n_kv_groups, where);
  Read(j, "vocab", c.vocab, where);
  Read(j, "n_experts", c.n_experts, where);
  Read(j, "top_k", c.top_k, where);
  Read(j, "d_expert", c.d_expert, where);
  std::string placement = NormPlacementName(c.norm_placement);
  Read(j, "norm_placement", placement, where);
  MOEGROW_CHECK(placement == "pre" || placement == "post",
                ErrorKind::kArgument,
                "model.norm_placement must be 'pre' or 'post'");
  c.norm_placement =
      placement == "pre" ? NormPlacement::kPre : NormPlacement::kPost;
  std::string score = "sigmoid";
  Read(j, "router_score", score, where);
  MOEGROW_CHECK(score == "sigmoid", ErrorKind::kArgument,
                "model.router_score must be 'sigmoid'");
  Read(j, "router_bias", c.router_bias, where);
  Read(j, "gate_normalize", c.gate_normalize, where);
  Read(j, "rope_base", c.rope_base, where);
  Read(j, "init_std", c.init_std, where);
  Read(j, "norm_eps", c.norm_eps, where);
  Read(j, "aux_loss_coeff", c.aux_loss_coeff, where);
  Read(j, "aux_global_batch", c.aux_global_batch, where);
  c.Validate();
  return c;
}

json ToJson(const TrainingMetadata& m) {
  json history = json::array();
  for (const auto& ev : m.growth_history)
    history.push_back(json{{"kind", ev.kind},
                           {"plan", ev.plan},
                           {"base_step", ev.base_step},
                           {"base_flops", ev.base_flops}});
  return json{{"step", m.step},
              {"cumulative_flops", m.cumulative_flops},
              {"growth_history", history}};
}

TrainingMetadata MetadataFromJson(const json& j) {
  RejectUnknownKeys(j, {"step", "cumulative_flops", "growth_history"},
                    "metadata");
  TrainingMetadata m;
  Read(j, "step", m.step, "metadata");
  Read(j, "cumulative_flops", m.cumulative_flops, "metadata");
  if (auto it = j.find("growth_history"); it != j.end()) {
    MOEGROW_CHECK(it->is_array(), ErrorKind::kArgument,
                  "metadata.growth_history must be an array");
    for (const auto& ev : *it) {
      RejectUnknownKeys(ev, {"kind", "plan", "base_step", "base_flops"},
                        "growth event");
      GrowthEvent g;
      Read(ev, "kind", g.kind, "growth event");
      Read(ev, "plan", g.plan, "growth event");
      Read(ev, "base_step", g.base_step, "growth event");
      Read(ev, "base_flops", g.base_flops, "growth event");
      m.growth_history.push_back(std::move(g));
    }
  }
  return m;
}

}  // namespace moegrow
