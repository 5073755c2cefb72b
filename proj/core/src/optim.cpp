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

#include "dynembed/optim.hpp"

#include <cmath>
#include <unordered_map>

#include "dynembed/error.hpp"

namespace dynembed {

GradientBatch aggregate_duplicates(const GradientBatch& batch) {
  GradientBatch out;
  out.keys.reserve(batch.keys.size());
  out.gradients.reserve(batch.keys.size());
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < batch.keys.size(); ++i) {
    auto [it, inserted] = index.emplace(batch.keys[i], out.keys.size());
    if (inserted) {
      out.keys.push_back(batch.keys[i]);
      out.gradients.push_back(batch.gradients[i]);
      continue;
    }
    auto& sum = out.gradients[it->second];
    const auto& g = batch.gradients[i];
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += g[d];
  }
  return out;
}

namespace {

std::vector<float>& slot_or_init(EmbeddingEntry& entry, const char* name,
                                 std::size_t dim, float fill) {
  auto it = entry.slots.find(name);
  if (it == entry.slots.end()) {
    it = entry.slots.emplace(name, std::vector<float>(dim, fill)).first;
  }
  return it->second;
}

}  // namespace

void apply_sgd(EmbeddingEntry& entry, const std::vector<float>& gradient,
               const OptimizerSpec& opt) {
  const float lr = opt.learning_rate;
  float* w = entry.vector.data();
  const float* g = gradient.data();
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    w[i] = w[i] - lr * g[i];
  }
}

void apply_adagrad(EmbeddingEntry& entry, const std::vector<float>& gradient,
                   const OptimizerSpec& opt) {
  const float lr = opt.learning_rate;
  auto& acc = slot_or_init(entry, kAdagradSlot, gradient.size(),
                           opt.adagrad_initial_accumulator);
  float* w = entry.vector.data();
  float* a = acc.data();
  const float* g = gradient.data();
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    a[i] = a[i] + g[i] * g[i];
    if (a[i] > 0.0f) {
      w[i] = w[i] - (lr * g[i]) / std::sqrt(a[i]);
    }
  }
}

void apply_momentum(EmbeddingEntry& entry, const std::vector<float>& gradient,
                    const OptimizerSpec& opt) {
  const float lr = opt.learning_rate;
  const float mu = opt.momentum_coefficient;
  auto& mom = slot_or_init(entry, kMomentumSlot, gradient.size(), 0.0f);
  float* w = entry.vector.data();
  float* m = mom.data();
  const float* g = gradient.data();
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    m[i] = mu * m[i] + g[i];
    w[i] = w[i] - lr * m[i];
  }
}

void apply_gradients(EmbeddingStore& store, const GradientBatch& batch,
                     std::uint64_t step) {
  apply_gradients(store, batch, step, store.config().optimizer, true);
}

void apply_gradients(EmbeddingStore& store, const GradientBatch& batch,
                     std::uint64_t step, const OptimizerSpec& opt,
                     bool count_frequency) {
  if (batch.keys.size() != batch.gradients.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "gradient batch has " + std::to_string(batch.keys.size()) +
                    " keys but " + std::to_string(batch.gradients.size()) +
                    " gradients");
  }
  const std::uint32_t dim = store.stored_dim();
  for (std::size_t i = 0; i < batch.keys.size(); ++i) {
    validate_key(batch.keys[i]);
    if (batch.gradients[i].size() != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "gradient for '" + batch.keys[i] + "' has width " +
                      std::to_string(batch.gradients[i].size()) +
                      ", expected " + std::to_string(dim));
    }
    if (!all_finite(batch.gradients[i])) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "non-finite gradient for key '" + batch.keys[i] + "'");
    }
  }

  const GradientBatch combined = aggregate_duplicates(batch);
  std::unordered_map<std::string_view, const std::vector<float>*> by_key;
  by_key.reserve(combined.keys.size());
  for (std::size_t i = 0; i < combined.keys.size(); ++i) {
    by_key.emplace(combined.keys[i], &combined.gradients[i]);
  }
  store.update(combined.keys, step,
               [&](const EmbeddingKey& key, EmbeddingEntry& entry) {
                 const std::vector<float>& g = *by_key.at(key);
                 switch (opt.kind) {
                   case OptimizerKind::kSgd:
                     apply_sgd(entry, g, opt);
                     break;
                   case OptimizerKind::kAdagrad:
                     apply_adagrad(entry, g, opt);
                     break;
                   case OptimizerKind::kMomentum:
                     apply_momentum(entry, g, opt);
                     break;
                 }
               },
               count_frequency);
}

}  // namespace dynembed
