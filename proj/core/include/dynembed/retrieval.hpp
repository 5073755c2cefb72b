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
#include <vector>

#include "dynembed/store.hpp"
#include "dynembed/types.hpp"

namespace dynembed {

// Exact maximum-inner-product retrieval. Each worker scans its shard; the
// master merges the per-shard lists. Because every shard list is its exact
// local top-k, the merge of the lists is the exact global top-k — the scheme
// is lossless under any sharding of the key set.

struct ScoredKey {
  EmbeddingKey id;
  float score = 0.0f;

  bool operator==(const ScoredKey&) const = default;
};

// Result-list order: score descending, ties by ascending key bytes — a total
// order, so results are deterministic and merge-stable.
bool scored_before(const ScoredKey& a, const ScoredKey& b);

// Exact top-k over the shard by score = <activation, w> (+ bias when the
// table stores one), accumulated in double and reported as f32. Activation
// must be embedding_dim wide and finite, and k at least 1 (kInvalidConfig).
// Empty shard yields an empty list.
std::vector<ScoredKey> worker_top_k(EmbeddingStore& store,
                                    const std::vector<float>& activation,
                                    std::uint32_t k);

// Global top-k of the union of per-shard lists; invariant under permutation
// of the input lists.
std::vector<ScoredKey> merge_top_k(std::vector<std::vector<ScoredKey>> lists,
                                   std::uint32_t k);

}  // namespace dynembed
