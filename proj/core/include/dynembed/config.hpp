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
#include <optional>
#include <string>
#include <vector>

#include "dynembed/types.hpp"

namespace dynembed {

enum class InitializerKind : std::uint8_t {
  kZeros = 0,
  kConstant = 1,
  kUniform = 2,  // uniform(-param, param)
  kNormal = 3,   // normal(0, param)
};

struct InitializerSpec {
  InitializerKind kind = InitializerKind::kZeros;
  // constant value, uniform half-range r, or normal sigma.
  double param = 0.0;

  static InitializerSpec zeros() { return {InitializerKind::kZeros, 0.0}; }
  static InitializerSpec constant(double v) { return {InitializerKind::kConstant, v}; }
  static InitializerSpec uniform(double r) { return {InitializerKind::kUniform, r}; }
  static InitializerSpec normal(double sigma) { return {InitializerKind::kNormal, sigma}; }

  bool operator==(const InitializerSpec&) const = default;
};

enum class OptimizerKind : std::uint8_t {
  kSgd = 0,
  kAdagrad = 1,
  kMomentum = 2,
};

// Slot names are fixed per optimizer kind and appear in snapshots; changing
// them is a format break.
inline constexpr const char* kAdagradSlot = "accumulator";
inline constexpr const char* kMomentumSlot = "momentum";

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kSgd;
  float learning_rate = 0.01f;
  float adagrad_initial_accumulator = 0.1f;
  float momentum_coefficient = 0.9f;

  static OptimizerSpec sgd(float lr) { return {OptimizerKind::kSgd, lr, 0.0f, 0.0f}; }
  static OptimizerSpec adagrad(float lr, float initial_accumulator = 0.1f) {
    return {OptimizerKind::kAdagrad, lr, initial_accumulator, 0.0f};
  }
  static OptimizerSpec momentum(float lr, float mu) {
    return {OptimizerKind::kMomentum, lr, 0.0f, mu};
  }

  bool operator==(const OptimizerSpec&) const = default;
};

enum class SamplerStrategyKind : std::uint8_t {
  kUniform = 0,
  kFrequencyPower = 1,  // draw probability proportional to frequency^power
};

struct SamplerStrategy {
  SamplerStrategyKind kind = SamplerStrategyKind::kUniform;
  double power = 0.75;

  static SamplerStrategy uniform() { return {SamplerStrategyKind::kUniform, 0.0}; }
  static SamplerStrategy frequency_power(double p) {
    return {SamplerStrategyKind::kFrequencyPower, p};
  }

  bool operator==(const SamplerStrategy&) const = default;
};

struct BloomSpec {
  std::uint64_t expected_keys = 0;
  double target_false_positive_rate = 0.01;
  std::uint64_t admit_threshold = 1;

  bool operator==(const BloomSpec&) const = default;
};

struct LifetimeSpec {
  // Minimum update count for an entry to survive export. 0 disables the gate.
  std::uint64_t frequency_cutoff = 0;
  std::optional<BloomSpec> bloom;

  bool operator==(const LifetimeSpec&) const = default;
};

enum class BackendKind : std::uint8_t {
  kInMemory = 0,
  kFileSnapshot = 1,
  kCachedRemote = 2,
};

struct BackendSpec {
  BackendKind kind = BackendKind::kInMemory;
  std::string path;         // file_snapshot
  std::string remote_name;  // cached_remote
  std::uint64_t cache_capacity = 1 << 20;

  static BackendSpec in_memory() { return {}; }
  static BackendSpec file_snapshot(std::string p) {
    BackendSpec b;
    b.kind = BackendKind::kFileSnapshot;
    b.path = std::move(p);
    return b;
  }
  static BackendSpec cached_remote(std::string name, std::uint64_t capacity) {
    BackendSpec b;
    b.kind = BackendKind::kCachedRemote;
    b.remote_name = std::move(name);
    b.cache_capacity = capacity;
    return b;
  }

  bool operator==(const BackendSpec&) const = default;
};

// The per-table configuration. (name, config_digest) uniquely identifies a
// table; the digest covers every field except `name` (see config_digest).
struct TableConfig {
  std::string name;
  std::uint32_t embedding_dim = 0;
  bool has_bias = false;
  InitializerSpec initializer;
  std::uint64_t seed = 0;
  OptimizerSpec optimizer;
  SamplerStrategy sampler_strategy;
  LifetimeSpec lifetime;
  BackendSpec backend;

  std::uint32_t stored_dim() const noexcept {
    return embedding_dim + (has_bias ? 1u : 0u);
  }

  bool operator==(const TableConfig&) const = default;
};

// Convenience constructor applying the defaults: normal(0, 1/sqrt(dim))
// initializer, and the DYNEMBED_SEED environment override when set.
TableConfig make_table_config(std::string name, std::uint32_t embedding_dim,
                              bool has_bias, OptimizerSpec optimizer,
                              std::uint64_t seed = 0);

// Throws Error(kInvalidConfig) naming the offending field.
void validate_config(const TableConfig& config);

// Stable 64-bit digest over every field except `name`. The byte-exact field
// encoding is documented in docs/protocol.md (it participates in snapshot
// headers and checkpoint manifests).
std::uint64_t config_digest(const TableConfig& config);

// Canonical little-endian encoding of the digest input (without the name).
// Exposed for the protocol doc's test vectors.
std::vector<std::uint8_t> encode_config_fields(const TableConfig& config);

// Deterministic first-sight vector: a pure function of
// (key, config.initializer, config.seed). Length stored_dim().
std::vector<float> init_vector(const EmbeddingKey& key, const TableConfig& config);

}  // namespace dynembed
