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

#include "moegrow/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "moegrow/error.hpp"

namespace moegrow {

MarkovChain::MarkovChain(const CorpusSpec& spec)
    : vocab_(spec.vocab), order_(spec.order) {
  MOEGROW_CHECK(spec.vocab >= 2, ErrorKind::kArgument,
                "corpus vocab must be >= 2");
  MOEGROW_CHECK(spec.order == 1 || spec.order == 2, ErrorKind::kArgument,
                "corpus order must be 1 or 2");
  MOEGROW_CHECK(spec.concentration >= 0.0 && !std::isnan(spec.concentration),
                ErrorKind::kArgument, "corpus concentration must be >= 0");
  MOEGROW_CHECK(spec.noise >= 0.0 && std::isfinite(spec.noise),
                ErrorKind::kArgument, "corpus noise must be finite and >= 0");
  n_states_ = order_ == 1 ? vocab_ : vocab_ * vocab_;

  std::mt19937_64 rng(spec.transition_seed);
  std::vector<std::size_t> perm(vocab_);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> succ(vocab_);
  for (std::size_t i = 0; i < vocab_; ++i)
    succ[perm[i]] = perm[(i + 1) % vocab_];

  std::normal_distribution<double> normal(0.0, 1.0);
  probs_.assign(n_states_ * vocab_, 0.0);
  std::vector<double> logits(vocab_);
  for (std::size_t s = 0; s < n_states_; ++s) {
    const std::size_t last = s % vocab_;
    for (std::size_t t = 0; t < vocab_; ++t) logits[t] = spec.noise * normal(rng);
    if (std::isinf(spec.concentration)) {
      probs_[s * vocab_ + succ[last]] = 1.0;
      continue;
    }
    logits[succ[last]] += spec.concentration;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t t = 0; t < vocab_; ++t) z += std::exp(logits[t] - mx);
    for (std::size_t t = 0; t < vocab_; ++t)
      probs_[s * vocab_ + t] = std::exp(logits[t] - mx) / z;
  }
}

std::span<const double> MarkovChain::Row(std::size_t state) const {
  return std::span<const double>(probs_).subspan(state * vocab_, vocab_);
}

std::size_t MarkovChain::NextState(std::size_t state, std::size_t token) const {
  return (state * vocab_ + token) % n_states_;
}

bool MarkovChain::Irreducible() const {
  auto reach = [&](bool forward) {
    std::vector<std::vector<std::size_t>> adj(n_states_);
    for (std::size_t s = 0; s < n_states_; ++s)
      for (std::size_t t = 0; t < vocab_; ++t)
        if (probs_[s * vocab_ + t] > 0.0) {
          const std::size_t n = NextState(s, t);
          if (forward)
            adj[s].push_back(n);
          else
            adj[n].push_back(s);
        }
    std::vector<char> seen(n_states_, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      const std::size_t s = stack.back();
      stack.pop_back();
      for (auto n : adj[s])
        if (!seen[n]) {
          seen[n] = 1;
          ++count;
          stack.push_back(n);
        }
    }
    return count == n_states_;
  };
  return reach(true) && reach(false);
}

std::vector<double> MarkovChain::Stationary() const {
  MOEGROW_CHECK(Irreducible(), ErrorKind::kSpec,
                "Markov chain is reducible; stationary distribution is not "
                "unique");
  // Solve pi (P - I) = 0 with sum(pi) = 1: transpose system, last equation
  // replaced by normalisation.
  const std::size_t n = n_states_;
  std::vector<double> a(n * n, 0.0), b(n, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < vocab_; ++t)
      a[NextState(s, t) * n + s] += probs_[s * vocab_ + t];
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] -= 1.0;
  for (std::size_t j = 0; j < n; ++j) a[(n - 1) * n + j] = 1.0;
  b[n - 1] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    MOEGROW_CHECK(std::abs(a[piv * n + col]) > 1e-300, ErrorKind::kSpec,
                  "singular stationary system");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j)
        std::swap(a[col * n + j], a[piv * n + j]);
      std::swap(b[col], b[piv]);
    }
    const double inv = 1.0 / a[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] * inv;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> pi(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * pi[j];
    pi[i] = s / a[i * n + i];
  }
  for (auto& v : pi) v = std::max(v, 0.0);
  const double total = std::accumulate(pi.begin(), pi.end(), 0.0);
  for (auto& v : pi) v /= total;
  return pi;
}

std::vector<double> MarkovChain::StationaryUnigram() const {
  const auto pi = Stationary();
  std::vector<double> uni(vocab_, 0.0);
  for (std::size_t s = 0; s < n_states_; ++s) uni[s % vocab_] += pi[s];
  return uni;
}

std::vector<std::int32_t> GenerateCorpus(const CorpusSpec& spec,
                                         std::uint64_t seed) {
  const MarkovChain chain(spec);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, spec.vocab - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::int32_t> out;
  out.reserve(spec.length);
  std::size_t state = 0;
  for (std::size_t i = 0; i < spec.order && out.size() < spec.length; ++i) {
    const std::size_t tok = pick(rng);
    out.push_back(std::int32_t(tok));
    state = chain.NextState(state, tok);
  }
  while (out.size() < spec.length) {
    const auto row = chain.Row(state);
    const double u = unif(rng);
    double acc = 0.0;
    std::size_t tok = spec.vocab - 1;
    for (std::size_t t = 0; t < spec.vocab; ++t) {
      acc += row[t];
      if (u < acc) {
        tok = t;
        break;
      }
    }
    // Guard against u landing in the rounding gap above the last nonzero.
    while (row[tok] == 0.0 && tok > 0) --tok;
    out.push_back(std::int32_t(tok));
    state = chain.NextState(state, tok);
  }
  return out;
}

double EntropyRate(const CorpusSpec& spec) {
  const MarkovChain chain(spec);
  const auto pi = chain.Stationary();
  double h = 0.0;
  for (std::size_t s = 0; s < chain.n_states(); ++s) {
    double row_h = 0.0;
    for (double p : chain.Row(s))
      if (p > 0.0) row_h -= p * std::log(p);
    h += pi[s] * row_h;
  }
  return h;
}

BatchIterator::BatchIterator(std::span<const std::int32_t> stream,
                             std::size_t batch_size, std::size_t seq_len,
                             std::uint64_t seed)
    : stream_(stream.begin(), stream.end()),
      batch_size_(batch_size),
      seq_len_(seq_len),
      rng_(seed) {
  MOEGROW_CHECK(batch_size >= 1 && seq_len >= 1, ErrorKind::kArgument,
                "batch size and sequence length must be >= 1");
  MOEGROW_CHECK(stream.size() >= batch_size * (seq_len + 1), ErrorKind::kData,
                "stream of " + std::to_string(stream.size()) +
                    " tokens cannot fill one batch of " +
                    std::to_string(batch_size) + " x " +
                    std::to_string(seq_len + 1));
  for (std::size_t off = 0; off + seq_len + 1 <= stream.size();
       off += seq_len + 1)
    offsets_.push_back(off);
  Reshuffle();
}

void BatchIterator::Reshuffle() {
  std::shuffle(offsets_.begin(), offsets_.end(), rng_);
  cursor_ = 0;
}

Batch BatchIterator::Next() {
  Batch b;
  b.batch_size = batch_size_;
  b.seq_len = seq_len_;
  b.inputs.reserve(batch_size_ * seq_len_);
  b.targets.reserve(batch_size_ * seq_len_);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    if (cursor_ == offsets_.size()) Reshuffle();
    const std::size_t off = offsets_[cursor_++];
    b.inputs.insert(b.inputs.end(), stream_.begin() + std::ptrdiff_t(off),
                    stream_.begin() + std::ptrdiff_t(off + seq_len_));
    b.targets.insert(b.targets.end(),
                     stream_.begin() + std::ptrdiff_t(off + 1),
                     stream_.begin() + std::ptrdiff_t(off + seq_len_ + 1));
  }
  ++served_;
  return b;
}

std::vector<Batch> SequentialBatches(std::span<const std::int32_t> stream,
                                     std::size_t batch_size,
                                     std::size_t seq_len) {
  MOEGROW_CHECK(stream.size() >= batch_size * (seq_len + 1), ErrorKind::kData,
                "held-out stream too short for one batch");
  std::vector<Batch> out;
  Batch cur;
  for (std::size_t off = 0; off + seq_len + 1 <= stream.size();
       off += seq_len + 1) {
    cur.inputs.insert(cur.inputs.end(), stream.begin() + std::ptrdiff_t(off),
                      stream.begin() + std::ptrdiff_t(off + seq_len));
    cur.targets.insert(cur.targets.end(),
                       stream.begin() + std::ptrdiff_t(off + 1),
                       stream.begin() + std::ptrdiff_t(off + seq_len + 1));
    if (cur.inputs.size() == batch_size * seq_len) {
      cur.batch_size = batch_size;
      cur.seq_len = seq_len;
      out.push_back(std::move(cur));
      cur = Batch{};
    }
  }
  return out;
}

void WriteTokenFile(const std::filesystem::path& path,
                    std::span<const std::int32_t> tokens) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MOEGROW_CHECK(os.good(), ErrorKind::kIo,
                "cannot open '" + path.string() + "' for writing");
  std::vector<unsigned char> buf(tokens.size() * 4);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto v = std::uint32_t(tokens[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = (v >> (8 * b)) & 0xFFu;
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           std::streamsize(buf.size()));
  MOEGROW_CHECK(os.good(), ErrorKind::kIo,
                "write failed for '" + path.string() + "'");
}

std::vector<std::int32_t> ReadTokenFile(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  MOEGROW_CHECK(is.good(), ErrorKind::kIo,
                "cannot open '" + path.string() + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  MOEGROW_CHECK(buf.size() % 4 == 0, ErrorKind::kCorruption,
                "token file size is not a multiple of 4 bytes");
  std::vector<std::int32_t> out(buf.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(buf[i * 4 + b]) << (8 * b);
    out[i] = std::int32_t(v);
  }
  return out;
}

}  // namespace moegrow
