// Copyright 2026 The dynembed Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynembed/config.hpp"
#include "dynembed/store.hpp"
#include "dynembed/types.hpp"

namespace dynembed {

// Candidate sampling, two-phase:
//
//   phase 1 (per shard)  sample_shard() draws this shard's candidates and
//                        resolves the shard's share of the positive keys.
//   phase 2 (merge)      build_sample_pool() stitches shard outputs together;
//                        assemble_example() / compute_logits_for_example()
//                        produce per-example results from the shared pool.
//
// Draws use weighted reservoir priorities (Efraimidis–Spirakis): every key
// gets priority u^(1/w) where u is a hash of (seed, key) — a pure function
// independent of shard layout and iteration order — and a draw of n keys is
// the top n by (priority desc, key asc). Because priorities do not depend on
// topology, a single-shard service deployment and the in-process reference
// path run the identical selection on identical numbers.

struct SampledResult {
  EmbeddingKey id;
  bool is_positive = false;
  float prob = 0.0f;

  bool operator==(const SampledResult&) const = default;
};

// A drawn negative candidate with everything the merge phase needs.
struct SampledCandidate {
  EmbeddingKey key;
  double weight = 0.0;    // strategy weight at draw time
  double priority = 0.0;  // selection priority, in (0, 1)
  std::uint64_t frequency = 0;
  std::vector<float> vector;  // stored_dim wide
};

struct PositiveInfo {
  EmbeddingKey key;
  bool resident = false;
  double weight = 0.0;        // 0 when not resident or strategy-excluded
  std::vector<float> vector;  // stored value, or the deterministic init
};

struct ShardSampleOutput {
  // Local top-quota candidates, sorted by (priority desc, key asc).
  std::vector<SampledCandidate> negatives;
  // Total strategy weight and key count of this shard's sampling universe
  // (after any range restriction).
  double weight_sum = 0.0;
  std::uint64_t universe_size = 0;
  std::vector<PositiveInfo> positives;
};

// Weight of a key under a strategy: uniform -> 1; frequency_power ->
// frequency^p with frequency 0 excluded (weight 0 keys cannot be drawn).
double strategy_weight(const SamplerStrategy& strategy, std::uint64_t frequency);

// The order-independent draw priority described above.
double sample_priority(std::uint64_t seed, const EmbeddingKey& key, double weight);

// frequency_power over an all-zero-frequency universe has no drawable key;
// such requests degrade to uniform. The decision uses the global
// (cross-shard) weight sum so every shard degrades in lockstep.
SamplerStrategy resolve_fallback(const SamplerStrategy& requested,
                                 double global_weight_sum);

struct ShardSampleStats {
  std::uint64_t resident_count = 0;
  double weight_sum = 0.0;  // unrestricted, under the table's strategy
};

ShardSampleStats compute_sample_stats(EmbeddingStore& store,
                                      const SamplerStrategy& strategy);

// Phase 1. Draws up to `quota` negatives from the shard's resident keys and
// resolves `owned_positives` (the positive keys this shard is responsible
// for). `range` > 0 restricts the sampling universe to the shard's top-range
// keys by (frequency desc, key asc); 0 means unrestricted. Absent positives
// are reported non-resident with their deterministic init vector — the store
// is never mutated.
ShardSampleOutput sample_shard(EmbeddingStore& store,
                               const SamplerStrategy& effective_strategy,
                               std::uint64_t seed, std::uint32_t quota,
                               std::uint64_t range,
                               const std::vector<EmbeddingKey>& owned_positives);

// Largest-remainder split of `total` draws proportional to resident counts;
// remainder ties go to the lower shard index. All-empty shards get all zeros.
std::vector<std::uint32_t> proportional_quotas(
    const std::vector<std::uint64_t>& resident_counts, std::uint32_t total);

// Phase 2 shared state: the merged candidate pool one seed produced. Within a
// batch every example assembles from the same pool, which is exactly what
// per-example draws under the per-call seed would produce.
struct SamplePool {
  std::vector<SampledCandidate> negatives;  // global (priority desc, key asc)
  std::unordered_map<EmbeddingKey, PositiveInfo> positives;
  double weight_sum = 0.0;
  std::uint64_t universe_size = 0;
};

SamplePool build_sample_pool(std::vector<ShardSampleOutput> shards);

// One example's merged sample: distinct positives in first-occurrence order
// (flagged true), then up to num_sampled negatives in pool order with drawn
// keys equal to a positive folded into it. prob is the strategy probability
// weight/weight_sum; positives that cannot be drawn (absent or weight 0)
// report prob = 1. Throws kEmptyUniverse when both the pool and the positive
// list are empty, and kInternal if a positive key is missing from the pool.
struct MergedSample {
  std::vector<SampledResult> results;
  std::vector<double> probs;                // full-precision, parallel
  std::vector<std::vector<float>> vectors;  // parallel, stored_dim wide
};

MergedSample assemble_example(const SamplePool& pool,
                              const std::vector<EmbeddingKey>& positive_ids,
                              std::uint32_t num_sampled);

// Sampled-softmax logits for one example (Bias-augmented form: raw logit =
// <activation, w> + b accumulated in double, then the expected-count
// correction -log(prob * num_sampled) for negatives and
// -log(min(1, prob * num_sampled)) for positives; cast to f32 at the end).
// Requires a has_bias table and an embedding_dim-wide finite activation.
struct SampledLogits {
  std::vector<EmbeddingKey> ids;
  std::vector<float> logits;
  std::vector<std::uint8_t> label_flags;    // 1 = positive
  std::vector<double> probs;                // parallel
  std::vector<std::vector<float>> vectors;  // parallel, stored_dim wide
};

SampledLogits compute_logits_for_example(const SamplePool& pool,
                                         const std::vector<EmbeddingKey>& pos_keys,
                                         const std::vector<float>& activation,
                                         std::uint32_t num_sampled,
                                         const TableConfig& config);

// Single-process convenience paths used by the reference backend and unit
// tests: resolve fallback from local stats, run phase 1 with quota =
// num_sampled, merge, assemble.
std::vector<SampledResult> sample(EmbeddingStore& store,
                                  const std::vector<EmbeddingKey>& positive_ids,
                                  std::uint32_t num_sampled, std::uint64_t seed,
                                  std::uint64_t range = 0);

SampledLogits compute_sampled_logits(EmbeddingStore& store,
                                     const std::vector<EmbeddingKey>& pos_keys,
                                     const std::vector<float>& activation,
                                     std::uint32_t num_sampled, std::uint64_t seed,
                                     std::uint64_t range = 0);

// Double-accumulated inner product in index order; the shared scoring kernel
// for sampled logits and top-k retrieval.
double dot_double(const float* a, const float* b, std::size_t n);

}  // namespace dynembed
