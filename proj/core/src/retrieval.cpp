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

#include "dynembed/retrieval.hpp"

#include <algorithm>

#include "dynembed/error.hpp"
#include "dynembed/sampler.hpp"

namespace dynembed {

bool scored_before(const ScoredKey& a, const ScoredKey& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

std::vector<ScoredKey> worker_top_k(EmbeddingStore& store,
                                    const std::vector<float>& activation,
                                    std::uint32_t k) {
  const TableConfig& config = store.config();
  if (k == 0) {
    throw Error(ErrorCode::kInvalidConfig, "top_k requires k >= 1");
  }
  if (activation.size() != config.embedding_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "activation width " + std::to_string(activation.size()) +
                    " != embedding_dim " + std::to_string(config.embedding_dim));
  }
  if (!all_finite(activation)) {
    throw Error(ErrorCode::kNonFiniteValue, "non-finite activation");
  }

  const std::size_t dim = config.embedding_dim;
  const bool with_bias = config.has_bias;
  std::vector<ScoredKey> scored;
  store.for_each([&](const EmbeddingKey& key, const EmbeddingEntry& entry) {
    double s = dot_double(activation.data(), entry.vector.data(), dim);
    if (with_bias) s += static_cast<double>(entry.vector[dim]);
    // Ranking happens on the reported f32 score so that per-shard lists and
    // cross-shard merges order candidates identically.
    scored.push_back({key, static_cast<float>(s)});
  });

  const std::size_t take = std::min<std::size_t>(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), scored_before);
  scored.resize(take);
  return scored;
}

std::vector<ScoredKey> merge_top_k(std::vector<std::vector<ScoredKey>> lists,
                                   std::uint32_t k) {
  std::vector<ScoredKey> all;
  std::size_t total = 0;
  for (const auto& list : lists) total += list.size();
  all.reserve(total);
  for (auto& list : lists) {
    for (auto& item : list) all.push_back(std::move(item));
  }
  const std::size_t take = std::min<std::size_t>(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take),
                    all.end(), scored_before);
  all.resize(take);
  return all;
}

}  // namespace dynembed
