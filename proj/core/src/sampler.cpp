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

#include "dynembed/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"

namespace dynembed {

double dot_double(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double strategy_weight(const SamplerStrategy& strategy, std::uint64_t frequency) {
  switch (strategy.kind) {
    case SamplerStrategyKind::kUniform:
      return 1.0;
    case SamplerStrategyKind::kFrequencyPower:
      if (frequency == 0) return 0.0;  // never updated -> not drawable
      return std::pow(static_cast<double>(frequency), strategy.power);
  }
  return 0.0;
}

double sample_priority(std::uint64_t seed, const EmbeddingKey& key, double weight) {
  const double u = open_unit_double(mix_seed(seed, key_hash(key)));
  return std::pow(u, 1.0 / weight);
}

SamplerStrategy resolve_fallback(const SamplerStrategy& requested,
                                 double global_weight_sum) {
  if (requested.kind == SamplerStrategyKind::kFrequencyPower &&
      global_weight_sum == 0.0) {
    return SamplerStrategy::uniform();
  }
  return requested;
}

ShardSampleStats compute_sample_stats(EmbeddingStore& store,
                                      const SamplerStrategy& strategy) {
  ShardSampleStats stats;
  store.for_each([&](const EmbeddingKey&, const EmbeddingEntry& entry) {
    stats.resident_count += 1;
    stats.weight_sum += strategy_weight(strategy, entry.frequency);
  });
  return stats;
}

namespace {

// Ordering shared by shard-local selection and the cross-shard merge; a total
// order, so distributed merges cannot depend on arrival order.
bool candidate_before(const SampledCandidate& a, const SampledCandidate& b) {
  if (a.priority != b.priority) return a.priority > b.priority;
  return a.key < b.key;
}

}  // namespace

ShardSampleOutput sample_shard(EmbeddingStore& store,
                               const SamplerStrategy& effective_strategy,
                               std::uint64_t seed, std::uint32_t quota,
                               std::uint64_t range,
                               const std::vector<EmbeddingKey>& owned_positives) {
  struct Item {
    EmbeddingKey key;
    std::uint64_t frequency;
  };
  std::vector<Item> universe;  // ascending key order, straight from the store
  store.for_each([&](const EmbeddingKey& key, const EmbeddingEntry& entry) {
    universe.push_back({key, entry.frequency});
  });

  std::unordered_set<std::string_view> restricted;
  if (range > 0 && universe.size() > range) {
    std::vector<std::uint32_t> order(universe.size());
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(range),
                      order.end(), [&](std::uint32_t a, std::uint32_t b) {
                        if (universe[a].frequency != universe[b].frequency) {
                          return universe[a].frequency > universe[b].frequency;
                        }
                        return universe[a].key < universe[b].key;
                      });
    order.resize(range);
    std::sort(order.begin(), order.end());  // back to key order
    std::vector<Item> kept;
    kept.reserve(range);
    for (std::uint32_t idx : order) kept.push_back(std::move(universe[idx]));
    universe = std::move(kept);
  }
  const bool range_applied = range > 0;
  if (range_applied) {
    for (const auto& item : universe) restricted.insert(item.key);
  }

  ShardSampleOutput out;
  out.universe_size = universe.size();

  std::vector<SampledCandidate> drawable;
  drawable.reserve(universe.size());
  for (const auto& item : universe) {
    const double w = strategy_weight(effective_strategy, item.frequency);
    out.weight_sum += w;
    if (w <= 0.0) continue;
    SampledCandidate cand;
    cand.key = item.key;
    cand.weight = w;
    cand.frequency = item.frequency;
    cand.priority = sample_priority(seed, item.key, w);
    drawable.push_back(std::move(cand));
  }

  if (quota > 0 && !drawable.empty()) {
    const std::size_t take = std::min<std::size_t>(quota, drawable.size());
    std::partial_sort(drawable.begin(),
                      drawable.begin() + static_cast<std::ptrdiff_t>(take),
                      drawable.end(), candidate_before);
    drawable.resize(take);
    std::vector<EmbeddingKey> keys;
    keys.reserve(take);
    for (const auto& cand : drawable) keys.push_back(cand.key);
    auto entries = store.lookup(keys, LookupOptions{});
    for (std::size_t i = 0; i < drawable.size(); ++i) {
      // Keys are never removed, so a drawn key is always still resident.
      drawable[i].vector = std::move(entries[i]->vector);
    }
    out.negatives = std::move(drawable);
  }

  if (!owned_positives.empty()) {
    auto entries = store.lookup(owned_positives, LookupOptions{});
    out.positives.reserve(owned_positives.size());
    for (std::size_t i = 0; i < owned_positives.size(); ++i) {
      PositiveInfo info;
      info.key = owned_positives[i];
      if (entries[i]) {
        info.resident = true;
        const bool in_universe = !range_applied || restricted.count(info.key) > 0;
        info.weight =
            in_universe ? strategy_weight(effective_strategy, entries[i]->frequency)
                        : 0.0;
        info.vector = std::move(entries[i]->vector);
      } else {
        info.resident = false;
        info.weight = 0.0;
        info.vector = init_vector(info.key, store.config());
      }
      out.positives.push_back(std::move(info));
    }
  }
  return out;
}

std::vector<std::uint32_t> proportional_quotas(
    const std::vector<std::uint64_t>& resident_counts, std::uint32_t total) {
  const std::size_t n = resident_counts.size();
  std::vector<std::uint32_t> quotas(n, 0);
  unsigned __int128 sum = 0;
  for (std::uint64_t c : resident_counts) sum += c;
  if (sum == 0 || total == 0) return quotas;

  std::vector<unsigned __int128> remainders(n, 0);
  std::uint32_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned __int128 num =
        static_cast<unsigned __int128>(total) * resident_counts[i];
    quotas[i] = static_cast<std::uint32_t>(num / sum);
    remainders[i] = num % sum;
    assigned += quotas[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b];  // ties stay in index order
  });
  for (std::size_t i = 0; assigned < total && i < n; ++i) {
    if (remainders[order[i]] == 0) break;  // exact division, nothing left over
    quotas[order[i]] += 1;
    assigned += 1;
  }
  return quotas;
}

SamplePool build_sample_pool(std::vector<ShardSampleOutput> shards) {
  SamplePool pool;
  std::size_t total = 0;
  for (const auto& shard : shards) total += shard.negatives.size();
  pool.negatives.reserve(total);
  for (auto& shard : shards) {
    pool.weight_sum += shard.weight_sum;
    pool.universe_size += shard.universe_size;
    for (auto& cand : shard.negatives) pool.negatives.push_back(std::move(cand));
    for (auto& info : shard.positives) {
      pool.positives.emplace(info.key, std::move(info));
    }
  }
  std::sort(pool.negatives.begin(), pool.negatives.end(), candidate_before);
  return pool;
}

MergedSample assemble_example(const SamplePool& pool,
                              const std::vector<EmbeddingKey>& positive_ids,
                              std::uint32_t num_sampled) {
  if (pool.universe_size == 0 && positive_ids.empty()) {
    throw Error(ErrorCode::kEmptyUniverse,
                "no resident keys to sample and no positives given");
  }

  MergedSample out;
  std::unordered_set<std::string_view> positive_set;
  for (const auto& id : positive_ids) {
    if (!positive_set.insert(id).second) continue;  // distinct, first occurrence
    auto it = pool.positives.find(id);
    if (it == pool.positives.end()) {
      throw Error(ErrorCode::kInternal, "positive '" + id + "' was not resolved");
    }
    const PositiveInfo& info = it->second;
    const bool drawable =
        info.resident && info.weight > 0.0 && pool.weight_sum > 0.0;
    const double prob = drawable ? info.weight / pool.weight_sum : 1.0;
    out.results.push_back({id, true, static_cast<float>(prob)});
    out.probs.push_back(prob);
    out.vectors.push_back(info.vector);
  }

  std::uint32_t taken = 0;
  for (const auto& cand : pool.negatives) {
    if (taken == num_sampled) break;
    if (positive_set.count(cand.key)) continue;  // accidental hit, folded above
    const double prob = cand.weight / pool.weight_sum;
    out.results.push_back({cand.key, false, static_cast<float>(prob)});
    out.probs.push_back(prob);
    out.vectors.push_back(cand.vector);
    ++taken;
  }
  return out;
}

SampledLogits compute_logits_for_example(const SamplePool& pool,
                                         const std::vector<EmbeddingKey>& pos_keys,
                                         const std::vector<float>& activation,
                                         std::uint32_t num_sampled,
                                         const TableConfig& config) {
  if (!config.has_bias) {
    throw Error(ErrorCode::kInvalidConfig,
                "sampled logits require a has_bias table");
  }
  if (activation.size() != config.embedding_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "activation width " + std::to_string(activation.size()) +
                    " != embedding_dim " + std::to_string(config.embedding_dim));
  }
  if (!all_finite(activation)) {
    throw Error(ErrorCode::kNonFiniteValue, "non-finite activation");
  }

  MergedSample merged = assemble_example(pool, pos_keys, num_sampled);
  const std::size_t dim = config.embedding_dim;
  const double m = static_cast<double>(num_sampled);

  SampledLogits out;
  const std::size_t n = merged.results.size();
  out.ids.reserve(n);
  out.logits.reserve(n);
  out.label_flags.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = merged.vectors[i];
    const double raw =
        dot_double(activation.data(), w.data(), dim) + static_cast<double>(w[dim]);
    const bool is_positive = merged.results[i].is_positive;
    const double expected =
        is_positive ? std::min(1.0, merged.probs[i] * m) : merged.probs[i] * m;
    const double corrected = raw - std::log(expected);
    out.ids.push_back(merged.results[i].id);
    out.logits.push_back(static_cast<float>(corrected));
    out.label_flags.push_back(is_positive ? 1 : 0);
  }
  out.probs = std::move(merged.probs);
  out.vectors = std::move(merged.vectors);
  return out;
}

std::vector<SampledResult> sample(EmbeddingStore& store,
                                  const std::vector<EmbeddingKey>& positive_ids,
                                  std::uint32_t num_sampled, std::uint64_t seed,
                                  std::uint64_t range) {
  const ShardSampleStats stats =
      compute_sample_stats(store, store.config().sampler_strategy);
  const SamplerStrategy effective =
      resolve_fallback(store.config().sampler_strategy, stats.weight_sum);
  SamplePool pool = build_sample_pool(
      {sample_shard(store, effective, seed, num_sampled, range, positive_ids)});
  return assemble_example(pool, positive_ids, num_sampled).results;
}

SampledLogits compute_sampled_logits(EmbeddingStore& store,
                                     const std::vector<EmbeddingKey>& pos_keys,
                                     const std::vector<float>& activation,
                                     std::uint32_t num_sampled, std::uint64_t seed,
                                     std::uint64_t range) {
  const ShardSampleStats stats =
      compute_sample_stats(store, store.config().sampler_strategy);
  const SamplerStrategy effective =
      resolve_fallback(store.config().sampler_strategy, stats.weight_sum);
  SamplePool pool = build_sample_pool(
      {sample_shard(store, effective, seed, num_sampled, range, pos_keys)});
  return compute_logits_for_example(pool, pos_keys, activation, num_sampled,
                                    store.config());
}

}  // namespace dynembed
