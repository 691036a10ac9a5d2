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

#include "moegrow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <string>

#include "moegrow/error.hpp"

namespace moegrow::ops {
namespace {

bool Tracking(GradTape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

Tensor Finish(const char* op, Shape shape, std::vector<float> data,
              bool track) {
  for (float v : data)
    if (!std::isfinite(v))
      Fail(ErrorKind::kNumeric,
           std::string(op) + " produced a non-finite value");
  return Tensor(std::move(shape), std::move(data), track);
}

void RequireRank(const Tensor& t, std::size_t rank, const char* op,
                 const char* name) {
  MOEGROW_CHECK(t.rank() == rank, ErrorKind::kDimension,
                std::string(op) + ": " + name + " must have rank " +
                    std::to_string(rank) + ", got " + ShapeString(t.shape()));
}

// c[m,n] += a[m,k] * b[k,n]
void GemmNN(const float* a, const float* b, float* c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      if (av == 0.0f) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
void GemmNT(const float* a, const float* b, float* c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k,n] += a[m,k]^T * b[m,n]
void GemmTN(const float* a, const float* b, float* c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a[i * k + p];
      if (av == 0.0f) continue;
      float* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

float SigmoidScalar(float x) {
  return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                   : std::exp(x) / (1.0f + std::exp(x));
}

}  // namespace

Tensor MatMul(GradTape* tape, const Tensor& a, const Tensor& b) {
  RequireRank(a, 2, "matmul", "lhs");
  RequireRank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  MOEGROW_CHECK(b.dim(0) == k, ErrorKind::kDimension,
                "matmul: inner dimensions disagree " + ShapeString(a.shape()) +
                    " x " + ShapeString(b.shape()));
  std::vector<float> out(m * n, 0.0f);
  GemmNN(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool track = Tracking(tape, {&a, &b});
  Tensor y = Finish("matmul", {m, n}, std::move(out), track);
  if (track) {
    tape->Record([a, b, y, m, k, n](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      if (a.requires_grad())
        GemmNT(gy->data(), b.data().data(), t.Grad(a).data(), m, n, k);
      if (b.requires_grad())
        GemmTN(a.data().data(), gy->data(), t.Grad(b).data(), m, k, n);
    });
  }
  return y;
}

Tensor MatMulNT(GradTape* tape, const Tensor& a, const Tensor& b) {
  RequireRank(a, 2, "matmul_nt", "lhs");
  RequireRank(b, 2, "matmul_nt", "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  MOEGROW_CHECK(b.dim(1) == k, ErrorKind::kDimension,
                "matmul_nt: inner dimensions disagree " +
                    ShapeString(a.shape()) + " x " + ShapeString(b.shape()) +
                    "^T");
  std::vector<float> out(m * n, 0.0f);
  GemmNT(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool track = Tracking(tape, {&a, &b});
  Tensor y = Finish("matmul_nt", {m, n}, std::move(out), track);
  if (track) {
    tape->Record([a, b, y, m, k, n](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      // da = gy * b ; db = gy^T * a
      if (a.requires_grad())
        GemmNN(gy->data(), b.data().data(), t.Grad(a).data(), m, n, k);
      if (b.requires_grad())
        GemmTN(gy->data(), a.data().data(), t.Grad(b).data(), m, n, k);
    });
  }
  return y;
}

Tensor Add(GradTape* tape, const Tensor& a, const Tensor& b) {
  MOEGROW_CHECK(a.shape() == b.shape(), ErrorKind::kDimension,
                "add: shapes differ " + ShapeString(a.shape()) + " vs " +
                    ShapeString(b.shape()));
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool track = Tracking(tape, {&a, &b});
  Tensor y = Finish("add", a.shape(), std::move(out), track);
  if (track) {
    tape->Record([a, b, y](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      for (const Tensor* in : {&a, &b}) {
        if (!in->requires_grad()) continue;
        auto g = t.Grad(*in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
      }
    });
  }
  return y;
}

Tensor AddBias(GradTape* tape, const Tensor& x, const Tensor& bias) {
  RequireRank(bias, 1, "add_bias", "bias");
  MOEGROW_CHECK(x.rank() >= 1 && x.shape().back() == bias.dim(0),
                ErrorKind::kDimension,
                "add_bias: trailing dimension of " + ShapeString(x.shape()) +
                    " does not match bias " + ShapeString(bias.shape()));
  const std::size_t d = bias.dim(0);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % d];
  const bool track = Tracking(tape, {&x, &bias});
  Tensor y = Finish("add_bias", x.shape(), std::move(out), track);
  if (track) {
    tape->Record([x, bias, y, d](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      if (x.requires_grad()) {
        auto g = t.Grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i];
      }
      if (bias.requires_grad()) {
        auto g = t.Grad(bias);
        for (std::size_t i = 0; i < gy->size(); ++i) g[i % d] += (*gy)[i];
      }
    });
  }
  return y;
}

Tensor Scale(GradTape* tape, const Tensor& x, float factor) {
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  const bool track = Tracking(tape, {&x});
  Tensor y = Finish("scale", x.shape(), std::move(out), track);
  if (track) {
    tape->Record([x, y, factor](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*gy)[i] * factor;
    });
  }
  return y;
}

Tensor Sigmoid(GradTape* tape, const Tensor& x) {
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = SigmoidScalar(x[i]);
  const bool track = Tracking(tape, {&x});
  Tensor y = Finish("sigmoid", x.shape(), std::move(out), track);
  if (track) {
    tape->Record([x, y](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(x);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += (*gy)[i] * y[i] * (1.0f - y[i]);
    });
  }
  return y;
}

Tensor Silu(GradTape* tape, const Tensor& x) {
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i] * SigmoidScalar(x[i]);
  const bool track = Tracking(tape, {&x});
  Tensor y = Finish("silu", x.shape(), std::move(out), track);
  if (track) {
    tape->Record([x, y](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float s = SigmoidScalar(x[i]);
        g[i] += (*gy)[i] * s * (1.0f + x[i] * (1.0f - s));
      }
    });
  }
  return y;
}

Tensor RmsNorm(GradTape* tape, const Tensor& x, const Tensor& gain,
               float eps) {
  RequireRank(gain, 1, "rms_norm", "gain");
  MOEGROW_CHECK(eps >= 0.0f, ErrorKind::kArgument, "rms_norm: eps < 0");
  MOEGROW_CHECK(x.rank() >= 1 && x.shape().back() == gain.dim(0),
                ErrorKind::kDimension,
                "rms_norm: trailing dimension of " + ShapeString(x.shape()) +
                    " does not match gain " + ShapeString(gain.shape()));
  const std::size_t d = gain.dim(0);
  const std::size_t rows = x.size() / d;
  std::vector<float> out(x.size());
  std::vector<float> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data().data() + r * d;
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += double(xr[j]) * xr[j];
    ms /= double(d);
    const double denom = std::sqrt(ms + eps);
    MOEGROW_CHECK(denom > 0.0, ErrorKind::kNumeric,
                  "rms_norm: zero row with eps = 0");
    inv[r] = float(1.0 / denom);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * inv[r] * gain[j];
  }
  const bool track = Tracking(tape, {&x, &gain});
  Tensor y = Finish("rms_norm", x.shape(), std::move(out), track);
  if (track) {
    tape->Record([x, gain, y, inv = std::move(inv), d, rows](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      std::span<float> gx, gg;
      if (x.requires_grad()) gx = t.Grad(x);
      if (gain.requires_grad()) gg = t.Grad(gain);
      for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data().data() + r * d;
        const float* dy = gy->data() + r * d;
        const float ir = inv[r];
        if (!gg.empty())
          for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xr[j] * ir;
        if (!gx.empty()) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j)
            dot += double(dy[j]) * gain[j] * xr[j];
          const float c = float(dot * ir * ir * ir / double(d));
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += ir * dy[j] * gain[j] - xr[j] * c;
        }
      }
    });
  }
  return y;
}

Tensor RopeRotateAt(GradTape* tape, const Tensor& x, float base,
                    std::span<const double> positions) {
  RequireRank(x, 3, "rope", "input");
  const std::size_t seq = x.dim(0), heads = x.dim(1), dh = x.dim(2);
  MOEGROW_CHECK(dh % 2 == 0, ErrorKind::kDimension,
                "rope: head dimension must be even, got " + std::to_string(dh));
  MOEGROW_CHECK(positions.size() == seq, ErrorKind::kDimension,
                "rope: expected one position per row");
  MOEGROW_CHECK(base > 0.0f, ErrorKind::kArgument, "rope: base must be > 0");
  const std::size_t half = dh / 2;
  std::vector<float> cosv(seq * half), sinv(seq * half);
  for (std::size_t r = 0; r < seq; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      const double theta =
          positions[r] * std::pow(double(base), -2.0 * double(j) / double(dh));
      cosv[r * half + j] = float(std::cos(theta));
      sinv[r * half + j] = float(std::sin(theta));
    }
  }
  std::vector<float> out(x.size());
  for (std::size_t r = 0; r < seq; ++r)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = (r * heads + h) * dh;
      for (std::size_t j = 0; j < half; ++j) {
        const float c = cosv[r * half + j], s = sinv[r * half + j];
        const float x0 = x[off + 2 * j], x1 = x[off + 2 * j + 1];
        out[off + 2 * j] = x0 * c - x1 * s;
        out[off + 2 * j + 1] = x0 * s + x1 * c;
      }
    }
  const bool track = Tracking(tape, {&x});
  Tensor y = Finish("rope", x.shape(), std::move(out), track);
  if (track) {
    tape->Record([x, y, cosv = std::move(cosv), sinv = std::move(sinv), seq,
                  heads, dh, half](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(x);
      for (std::size_t r = 0; r < seq; ++r)
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = (r * heads + h) * dh;
          for (std::size_t j = 0; j < half; ++j) {
            const float c = cosv[r * half + j], s = sinv[r * half + j];
            const float d0 = (*gy)[off + 2 * j], d1 = (*gy)[off + 2 * j + 1];
            g[off + 2 * j] += d0 * c + d1 * s;
            g[off + 2 * j + 1] += -d0 * s + d1 * c;
          }
        }
    });
  }
  return y;
}

Tensor RopeRotate(GradTape* tape, const Tensor& x, float base) {
  RequireRank(x, 3, "rope", "input");
  std::vector<double> positions(x.dim(0));
  std::iota(positions.begin(), positions.end(), 0.0);
  return RopeRotateAt(tape, x, base, positions);
}

Tensor Embedding(GradTape* tape, const Tensor& table,
                 std::span<const std::int32_t> tokens) {
  RequireRank(table, 2, "embedding", "table");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<float> out(tokens.size() * d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto tok = tokens[i];
    MOEGROW_CHECK(tok >= 0 && std::size_t(tok) < vocab, ErrorKind::kArgument,
                  "embedding: token " + std::to_string(tok) +
                      " outside vocabulary of " + std::to_string(vocab));
    std::copy_n(table.data().data() + std::size_t(tok) * d, d,
                out.data() + i * d);
  }
  const bool track = Tracking(tape, {&table});
  Tensor y = Finish("embedding", {tokens.size(), d}, std::move(out), track);
  if (track) {
    std::vector<std::int32_t> toks(tokens.begin(), tokens.end());
    tape->Record([table, y, toks = std::move(toks), d](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(table);
      for (std::size_t i = 0; i < toks.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          g[std::size_t(toks[i]) * d + j] += (*gy)[i * d + j];
    });
  }
  return y;
}

Tensor GatherRows(GradTape* tape, const Tensor& x,
                  std::span<const std::uint32_t> rows) {
  RequireRank(x, 2, "gather_rows", "input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<float> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    MOEGROW_CHECK(rows[i] < n, ErrorKind::kArgument,
                  "gather_rows: row index out of range");
    std::copy_n(x.data().data() + std::size_t(rows[i]) * d, d,
                out.data() + i * d);
  }
  const bool track = Tracking(tape, {&x});
  Tensor y = Finish("gather_rows", {rows.size(), d}, std::move(out), track);
  if (track) {
    std::vector<std::uint32_t> idx(rows.begin(), rows.end());
    tape->Record([x, y, idx = std::move(idx), d](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(x);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          g[std::size_t(idx[i]) * d + j] += (*gy)[i * d + j];
    });
  }
  return y;
}

Tensor CausalAttention(GradTape* tape, const Tensor& q, const Tensor& k,
                       const Tensor& v, std::size_t batch, std::size_t seq,
                       std::size_t n_heads, std::size_t n_groups) {
  RequireRank(q, 2, "attention", "q");
  RequireRank(k, 2, "attention", "k");
  RequireRank(v, 2, "attention", "v");
  MOEGROW_CHECK(n_groups > 0 && n_heads % n_groups == 0,
                ErrorKind::kDimension,
                "attention: heads must be divisible by kv groups");
  const std::size_t rows = batch * seq;
  MOEGROW_CHECK(q.dim(0) == rows && k.dim(0) == rows && v.dim(0) == rows,
                ErrorKind::kDimension, "attention: row count mismatch");
  MOEGROW_CHECK(q.dim(1) % n_heads == 0, ErrorKind::kDimension,
                "attention: q width not divisible by heads");
  const std::size_t dh = q.dim(1) / n_heads;
  MOEGROW_CHECK(k.dim(1) == n_groups * dh && v.dim(1) == n_groups * dh,
                ErrorKind::kDimension, "attention: k/v width mismatch");
  const std::size_t per_group = n_heads / n_groups;
  const std::size_t qw = n_heads * dh, kw = n_groups * dh;
  const float scale = 1.0f / std::sqrt(float(dh));

  // probs[b][h][i][j], j <= i
  std::vector<float> probs(batch * n_heads * seq * seq, 0.0f);
  std::vector<float> out(rows * qw, 0.0f);
  const float* qd = q.data().data();
  const float* kd = k.data().data();
  const float* vd = v.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t g = h / per_group;
      for (std::size_t i = 0; i < seq; ++i) {
        const float* qi = qd + (b * seq + i) * qw + h * dh;
        float* p = probs.data() + ((b * n_heads + h) * seq + i) * seq;
        float mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          const float* kj = kd + (b * seq + j) * kw + g * dh;
          float s = 0.0f;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        float z = 0.0f;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        float* oi = out.data() + (b * seq + i) * qw + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= z;
          const float* vj = vd + (b * seq + j) * kw + g * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  const bool track = Tracking(tape, {&q, &k, &v});
  Tensor y = Finish("attention", {rows, qw}, std::move(out), track);
  if (track) {
    tape->Record([q, k, v, y, probs = std::move(probs), batch, seq, n_heads,
                  per_group, dh, qw, kw, scale](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      const std::size_t rows = batch * seq;
      std::vector<float> gq(rows * qw, 0.0f), gk(rows * kw, 0.0f),
          gv(rows * kw, 0.0f);
      std::vector<float> dp(seq);
      const float* qd = q.data().data();
      const float* kd = k.data().data();
      const float* vd = v.data().data();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t g = h / per_group;
          for (std::size_t i = 0; i < seq; ++i) {
            const float* p = probs.data() + ((b * n_heads + h) * seq + i) * seq;
            const float* dyi = gy->data() + (b * seq + i) * qw + h * dh;
            float sum = 0.0f;
            for (std::size_t j = 0; j <= i; ++j) {
              const float* vj = vd + (b * seq + j) * kw + g * dh;
              float* gvj = gv.data() + (b * seq + j) * kw + g * dh;
              float s = 0.0f;
              for (std::size_t c = 0; c < dh; ++c) {
                s += dyi[c] * vj[c];
                gvj[c] += p[j] * dyi[c];
              }
              dp[j] = s;
              sum += p[j] * s;
            }
            const float* qi = qd + (b * seq + i) * qw + h * dh;
            float* gqi = gq.data() + (b * seq + i) * qw + h * dh;
            for (std::size_t j = 0; j <= i; ++j) {
              const float ds = p[j] * (dp[j] - sum) * scale;
              if (ds == 0.0f) continue;
              const float* kj = kd + (b * seq + j) * kw + g * dh;
              float* gkj = gk.data() + (b * seq + j) * kw + g * dh;
              for (std::size_t c = 0; c < dh; ++c) {
                gqi[c] += ds * kj[c];
                gkj[c] += ds * qi[c];
              }
            }
          }
        }
      auto flush = [&t](const Tensor& in, const std::vector<float>& src) {
        if (!in.requires_grad()) return;
        auto g = t.Grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
      };
      flush(q, gq);
      flush(k, gk);
      flush(v, gv);
    });
  }
  return y;
}

Tensor CrossEntropy(GradTape* tape, const Tensor& logits,
                    std::span<const std::int32_t> targets) {
  RequireRank(logits, 2, "cross_entropy", "logits");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  MOEGROW_CHECK(targets.size() == n && n > 0, ErrorKind::kDimension,
                "cross_entropy: need one target per logit row");
  std::vector<float> lse(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto tgt = targets[i];
    MOEGROW_CHECK(tgt >= 0 && std::size_t(tgt) < vocab, ErrorKind::kArgument,
                  "cross_entropy: target " + std::to_string(tgt) +
                      " outside vocabulary of " + std::to_string(vocab));
    const float* row = logits.data().data() + i * vocab;
    const float mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(double(row[j] - mx));
    lse[i] = float(double(mx) + std::log(z));
    total += double(lse[i]) - double(row[tgt]);
  }
  const bool track = Tracking(tape, {&logits});
  Tensor y = Finish("cross_entropy", {}, {float(total / double(n))}, track);
  if (track) {
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    tape->Record([logits, y, lse = std::move(lse), tg = std::move(tg), n,
                  vocab](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      const float scale = (*gy)[0] / float(n);
      auto g = t.Grad(logits);
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.data().data() + i * vocab;
        for (std::size_t j = 0; j < vocab; ++j)
          g[i * vocab + j] += std::exp(row[j] - lse[i]) * scale;
        g[i * vocab + std::size_t(tg[i])] -= scale;
      }
    });
  }
  return y;
}

TopK TopKSelect(std::span<const float> scores, std::size_t k) {
  MOEGROW_CHECK(k >= 1 && k <= scores.size(), ErrorKind::kArgument,
                "top_k: k=" + std::to_string(k) + " outside [1, " +
                    std::to_string(scores.size()) + "]");
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k),
                    order.end(), [&](std::uint32_t a, std::uint32_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(k);
  TopK out;
  out.values.reserve(k);
  for (auto i : order) out.values.push_back(scores[i]);
  out.indices = std::move(order);
  return out;
}

Tensor SelectGates(GradTape* tape, const Tensor& scores,
                   std::span<const std::uint32_t> selected, std::size_t k,
                   bool normalize) {
  RequireRank(scores, 2, "select_gates", "scores");
  const std::size_t n = scores.dim(0), e = scores.dim(1);
  MOEGROW_CHECK(selected.size() == n * k, ErrorKind::kDimension,
                "select_gates: selection must hold n*k expert ids");
  std::vector<float> out(n * k);
  std::vector<double> sums(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      MOEGROW_CHECK(selected[i * k + j] < e, ErrorKind::kArgument,
                    "select_gates: expert id out of range");
      s += scores[i * e + selected[i * k + j]];
    }
    if (normalize) {
      MOEGROW_CHECK(s > 0.0, ErrorKind::kNumeric,
                    "select_gates: selected scores sum to zero");
      sums[i] = s;
    }
    for (std::size_t j = 0; j < k; ++j)
      out[i * k + j] = float(scores[i * e + selected[i * k + j]] / sums[i]);
  }
  const bool track = Tracking(tape, {&scores});
  Tensor y = Finish("select_gates", {n, k}, std::move(out), track);
  if (track) {
    std::vector<std::uint32_t> sel(selected.begin(), selected.end());
    tape->Record([scores, y, sel = std::move(sel), sums = std::move(sums), n,
                  e, k, normalize](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(scores);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        if (normalize)
          for (std::size_t j = 0; j < k; ++j)
            dot += double((*gy)[i * k + j]) * y[i * k + j];
        for (std::size_t j = 0; j < k; ++j)
          g[i * e + sel[i * k + j]] +=
              float((double((*gy)[i * k + j]) - dot) / sums[i]);
      }
    });
  }
  return y;
}

Tensor CombineExperts(GradTape* tape, const Tensor& gates,
                      std::span<const ExpertContribution> parts,
                      std::size_t n_tokens, std::size_t d_model) {
  RequireRank(gates, 2, "combine_experts", "gates");
  MOEGROW_CHECK(gates.dim(0) == n_tokens, ErrorKind::kDimension,
                "combine_experts: gate rows must equal token count");
  const std::size_t k = gates.dim(1);
  // Accumulate in double so the sum does not depend on expert order at float
  // precision.
  std::vector<double> acc(n_tokens * d_model, 0.0);
  bool track = Tracking(tape, {&gates});
  for (const auto& part : parts) {
    MOEGROW_CHECK(part.output.rank() == 2 &&
                      part.output.dim(0) == part.tokens.size() &&
                      part.output.dim(1) == d_model &&
                      part.slots.size() == part.tokens.size(),
                  ErrorKind::kDimension, "combine_experts: malformed part");
    track = track || (tape && part.output.requires_grad());
    for (std::size_t r = 0; r < part.tokens.size(); ++r) {
      const std::size_t tok = part.tokens[r];
      MOEGROW_CHECK(tok < n_tokens && part.slots[r] < k, ErrorKind::kArgument,
                    "combine_experts: token or slot out of range");
      const double gate = gates[tok * k + part.slots[r]];
      const float* row = part.output.data().data() + r * d_model;
      double* dst = acc.data() + tok * d_model;
      for (std::size_t c = 0; c < d_model; ++c) dst[c] += gate * row[c];
    }
  }
  std::vector<float> out(acc.begin(), acc.end());
  Tensor y = Finish("combine_experts", {n_tokens, d_model}, std::move(out),
                    track);
  if (track) {
    std::vector<ExpertContribution> saved(parts.begin(), parts.end());
    tape->Record([gates, y, saved = std::move(saved), k, d_model](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      std::span<float> gg;
      if (gates.requires_grad()) gg = t.Grad(gates);
      for (const auto& part : saved) {
        std::span<float> go;
        if (part.output.requires_grad()) go = t.Grad(part.output);
        for (std::size_t r = 0; r < part.tokens.size(); ++r) {
          const std::size_t tok = part.tokens[r];
          const std::size_t slot = part.slots[r];
          const float gate = gates[tok * k + slot];
          const float* dy = gy->data() + tok * d_model;
          const float* row = part.output.data().data() + r * d_model;
          float dot = 0.0f;
          for (std::size_t c = 0; c < d_model; ++c) {
            dot += dy[c] * row[c];
            if (!go.empty()) go[r * d_model + c] += gate * dy[c];
          }
          if (!gg.empty()) gg[tok * k + slot] += dot;
        }
      }
    });
  }
  return y;
}

Tensor BalanceLoss(GradTape* tape, const Tensor& scores,
                   std::span<const std::uint32_t> selected, std::size_t k,
                   std::size_t group_size) {
  RequireRank(scores, 2, "balance_loss", "scores");
  const std::size_t n = scores.dim(0), e = scores.dim(1);
  MOEGROW_CHECK(selected.size() == n * k, ErrorKind::kDimension,
                "balance_loss: selection must hold n*k expert ids");
  MOEGROW_CHECK(group_size > 0 && n % group_size == 0, ErrorKind::kDimension,
                "balance_loss: token count must be a multiple of group size");
  const std::size_t groups = n / group_size;
  // coef[g][i] = E * fraction_i / group_size: d(loss_g)/d(score[t, i]).
  std::vector<double> coef(groups * e, 0.0);
  double total = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> count(e, 0.0), mean(e, 0.0);
    for (std::size_t t = g * group_size; t < (g + 1) * group_size; ++t) {
      for (std::size_t j = 0; j < k; ++j) count[selected[t * k + j]] += 1.0;
      for (std::size_t i = 0; i < e; ++i) mean[i] += scores[t * e + i];
    }
    for (std::size_t i = 0; i < e; ++i) {
      const double fraction = count[i] / double(group_size);
      total += double(e) * fraction * mean[i] / double(group_size);
      coef[g * e + i] = double(e) * fraction / double(group_size);
    }
  }
  const bool track = Tracking(tape, {&scores});
  Tensor y = Finish("balance_loss", {}, {float(total / double(groups))}, track);
  if (track) {
    tape->Record([scores, y, coef = std::move(coef), e, groups,
                  group_size](GradTape& t) {
      const auto* gy = t.FindGrad(y);
      if (!gy) return;
      auto g = t.Grad(scores);
      const double s = double((*gy)[0]) / double(groups);
      for (std::size_t grp = 0; grp < groups; ++grp)
        for (std::size_t t2 = grp * group_size; t2 < (grp + 1) * group_size;
             ++t2)
          for (std::size_t i = 0; i < e; ++i)
            g[t2 * e + i] += float(s * coef[grp * e + i]);
    });
  }
  return y;
}

}  // namespace moegrow::ops
