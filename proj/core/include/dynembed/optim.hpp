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

#include "dynembed/config.hpp"
#include "dynembed/store.hpp"
#include "dynembed/types.hpp"

namespace dynembed {

// Per-key gradients for one update call. gradients[i] belongs to keys[i] and
// must be stored_dim wide (the bias gradient, when the table has one, rides
// in the last component).
struct GradientBatch {
  std::vector<EmbeddingKey> keys;
  std::vector<std::vector<float>> gradients;
};

// Sums gradients of repeated keys, keeping first-occurrence key order and
// adding in occurrence order — the float sum therefore matches what a dense
// one-hot matmul accumulating left-to-right would produce.
GradientBatch aggregate_duplicates(const GradientBatch& batch);

// In-place single-entry steps. The f32 operation order below is part of the
// service contract (replays must reproduce state bit-for-bit), so these are
// built with floating-point contraction disabled and must not be "reordered
// but equivalent":
//
//   sgd:      w[i] = w[i] - lr * g[i]
//   adagrad:  a[i] = a[i] + g[i] * g[i]
//             if a[i] > 0:  w[i] = w[i] - (lr * g[i]) / sqrt(a[i])
//   momentum: m[i] = mu * m[i] + g[i]
//             w[i] = w[i] - lr * m[i]
//
// The adagrad guard only fires when the initial accumulator is 0 and every
// gradient seen so far (this one included) was 0 — the skipped step would
// otherwise be 0/0.
void apply_sgd(EmbeddingEntry& entry, const std::vector<float>& gradient,
               const OptimizerSpec& opt);
void apply_adagrad(EmbeddingEntry& entry, const std::vector<float>& gradient,
                   const OptimizerSpec& opt);
void apply_momentum(EmbeddingEntry& entry, const std::vector<float>& gradient,
                    const OptimizerSpec& opt);

// Validates the batch (widths, finiteness), aggregates duplicates, and applies
// the store's configured optimizer to every key, materializing absent keys
// first. Throws before touching any entry; a failed call mutates nothing.
void apply_gradients(EmbeddingStore& store, const GradientBatch& batch,
                     std::uint64_t step);

// Same, with the optimizer supplied by the caller (the service's per-request
// learning-rate override path) and control over frequency counting.
void apply_gradients(EmbeddingStore& store, const GradientBatch& batch,
                     std::uint64_t step, const OptimizerSpec& opt,
                     bool count_frequency);

}  // namespace dynembed
