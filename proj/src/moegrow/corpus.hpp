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
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace moegrow {

/// Markov source over `vocab` symbols conditioned on the previous `order`
/// tokens. Row s of the transition matrix is softmax(concentration * e_next(s)
/// + noise * z_s), where next(s) walks a random cycle through the vocabulary
/// and z_s is standard normal. Large concentration collapses the chain onto
/// the cycle; concentration = noise = 0 gives the uniform chain.
struct CorpusSpec {
  std::size_t vocab = 32;
  std::size_t order = 1;
  std::uint64_t transition_seed = 0;
  double concentration = 2.0;
  double noise = 1.0;
  std::size_t length = 1 << 20;
};

/// Dense transition structure materialised from a CorpusSpec.
class MarkovChain {
 public:
  explicit MarkovChain(const CorpusSpec& spec);

  std::size_t vocab() const { return vocab_; }
  std::size_t order() const { return order_; }
  /// Number of contexts: vocab^order.
  std::size_t n_states() const { return n_states_; }
  /// Next-token distribution for context `state`.
  std::span<const double> Row(std::size_t state) const;
  std::size_t NextState(std::size_t state, std::size_t token) const;

  /// Stationary distribution over contexts. Throws ErrorKind::kSpec when the
  /// chain is reducible.
  std::vector<double> Stationary() const;
  /// Stationary distribution over single tokens.
  std::vector<double> StationaryUnigram() const;
  bool Irreducible() const;

 private:
  std::size_t vocab_, order_, n_states_;
  std::vector<double> probs_;  // n_states x vocab
};

/// Token stream drawn from the chain; the initial context is drawn
/// uniformly. Bit-reproducible for a given (spec, seed).
std::vector<std::int32_t> GenerateCorpus(const CorpusSpec& spec,
                                         std::uint64_t seed);

/// sum_s pi_s sum_t -P_st ln P_st in nats per token.
double EntropyRate(const CorpusSpec& spec);

/// One batch of next-token training windows.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> inputs;   // batch_size * seq_len
  std::vector<std::int32_t> targets;  // inputs shifted by one
};

/// Cuts the stream into non-overlapping windows of seq_len+1 tokens and
/// serves them in a seeded random order, reshuffling at each epoch.
class BatchIterator {
 public:
  BatchIterator(std::span<const std::int32_t> stream, std::size_t batch_size,
                std::size_t seq_len, std::uint64_t seed);

  Batch Next();
  std::size_t n_windows() const { return offsets_.size(); }
  std::size_t batches_served() const { return served_; }

 private:
  void Reshuffle();

  std::vector<std::int32_t> stream_;
  std::size_t batch_size_, seq_len_;
  std::vector<std::size_t> offsets_;
  std::size_t cursor_ = 0;
  std::size_t served_ = 0;
  std::mt19937_64 rng_;
};

/// Every non-overlapping window in stream order, grouped into batches of
/// `batch_size`; a trailing partial batch is dropped.
std::vector<Batch> SequentialBatches(std::span<const std::int32_t> stream,
                                     std::size_t batch_size,
                                     std::size_t seq_len);

/// Flat little-endian int32 token file.
void WriteTokenFile(const std::filesystem::path& path,
                    std::span<const std::int32_t> tokens);
std::vector<std::int32_t> ReadTokenFile(const std::filesystem::path& path);

}  // namespace moegrow
