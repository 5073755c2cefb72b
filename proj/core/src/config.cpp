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

#include "dynembed/config.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"

namespace dynembed {

namespace {

bool valid_name(const std::string& name) {
  if (name.empty()) return false;
  auto head = [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
           (c >= '0' && c <= '9') || c == '_';
  };
  if (!head(name[0])) return false;
  for (char c : name.substr(1)) {
    if (!head(c) && c != '.' && c != '-') return false;
  }
  return true;
}

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

}  // namespace

TableConfig make_table_config(std::string name, std::uint32_t embedding_dim,
                              bool has_bias, OptimizerSpec optimizer,
                              std::uint64_t seed) {
  TableConfig config;
  config.name = std::move(name);
  config.embedding_dim = embedding_dim;
  config.has_bias = has_bias;
  config.optimizer = optimizer;
  config.seed = seed;
  if (const char* env = std::getenv("DYNEMBED_SEED")) {
    config.seed = std::strtoull(env, nullptr, 10);
  }
  if (embedding_dim > 0) {
    config.initializer =
        InitializerSpec::normal(1.0 / std::sqrt(static_cast<double>(embedding_dim)));
  }
  return config;
}

void validate_config(const TableConfig& config) {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kInvalidConfig, what);
  };
  if (!valid_name(config.name)) {
    fail("table name must match [A-Za-z0-9_][A-Za-z0-9_.-]*: '" + config.name + "'");
  }
  if (config.embedding_dim == 0) fail("embedding_dim must be >= 1");
  if (config.embedding_dim > (1u << 20)) fail("embedding_dim too large");

  const auto& init = config.initializer;
  if (!std::isfinite(init.param)) fail("initializer param must be finite");
  if (init.kind == InitializerKind::kUniform && init.param < 0.0) {
    fail("uniform initializer half-range must be >= 0");
  }
  if (init.kind == InitializerKind::kNormal && init.param < 0.0) {
    fail("normal initializer sigma must be >= 0");
  }

  const auto& opt = config.optimizer;
  if (!(opt.learning_rate > 0.0f) || !std::isfinite(opt.learning_rate)) {
    fail("learning_rate must be finite and > 0");
  }
  if (opt.kind == OptimizerKind::kAdagrad) {
    if (!(opt.adagrad_initial_accumulator >= 0.0f) ||
        !std::isfinite(opt.adagrad_initial_accumulator)) {
      fail("adagrad_initial_accumulator must be finite and >= 0");
    }
  }
  if (opt.kind == OptimizerKind::kMomentum) {
    if (!(opt.momentum_coefficient >= 0.0f) || opt.momentum_coefficient >= 1.0f) {
      fail("momentum_coefficient must be in [0, 1)");
    }
  }

  const auto& strat = config.sampler_strategy;
  if (strat.kind == SamplerStrategyKind::kFrequencyPower) {
    if (!std::isfinite(strat.power) || strat.power < 0.0) {
      fail("frequency_power exponent must be finite and >= 0");
    }
  }

  if (config.lifetime.bloom) {
    const auto& bloom = *config.lifetime.bloom;
    if (bloom.expected_keys == 0) fail("bloom expected_keys must be >= 1");
    if (!(bloom.target_false_positive_rate > 0.0) ||
        bloom.target_false_positive_rate > 0.1) {
      fail("bloom target_false_positive_rate must be in (0, 0.1]");
    }
    if (bloom.admit_threshold == 0) fail("bloom admit_threshold must be >= 1");
  }

  const auto& backend = config.backend;
  switch (backend.kind) {
    case BackendKind::kInMemory:
      break;
    case BackendKind::kFileSnapshot:
      if (backend.path.empty()) fail("file_snapshot backend requires a path");
      break;
    case BackendKind::kCachedRemote:
      if (backend.remote_name.empty()) fail("cached_remote backend requires a name");
      if (backend.cache_capacity == 0) fail("cached_remote cache_capacity must be >= 1");
      break;
  }
}

std::vector<std::uint8_t> encode_config_fields(const TableConfig& config) {
  // Field order and widths are frozen (docs/protocol.md). The name is
  // deliberately excluded so renamed tables with identical behavior share a
  // digest-compatible state.
  std::vector<std::uint8_t> out;
  put_u32(out, config.embedding_dim);
  put_u8(out, config.has_bias ? 1 : 0);

  put_u8(out, static_cast<std::uint8_t>(config.initializer.kind));
  put_f64(out, config.initializer.param);
  put_u64(out, config.seed);

  put_u8(out, static_cast<std::uint8_t>(config.optimizer.kind));
  put_f64(out, static_cast<double>(config.optimizer.learning_rate));
  put_f64(out, static_cast<double>(config.optimizer.adagrad_initial_accumulator));
  put_f64(out, static_cast<double>(config.optimizer.momentum_coefficient));

  put_u8(out, static_cast<std::uint8_t>(config.sampler_strategy.kind));
  put_f64(out, config.sampler_strategy.power);

  put_u64(out, config.lifetime.frequency_cutoff);
  if (config.lifetime.bloom) {
    put_u8(out, 1);
    put_u64(out, config.lifetime.bloom->expected_keys);
    put_f64(out, config.lifetime.bloom->target_false_positive_rate);
    put_u64(out, config.lifetime.bloom->admit_threshold);
  } else {
    put_u8(out, 0);
  }

  put_u8(out, static_cast<std::uint8_t>(config.backend.kind));
  switch (config.backend.kind) {
    case BackendKind::kInMemory:
      break;
    case BackendKind::kFileSnapshot:
      put_bytes(out, config.backend.path);
      break;
    case BackendKind::kCachedRemote:
      put_bytes(out, config.backend.remote_name);
      put_u64(out, config.backend.cache_capacity);
      break;
  }
  return out;
}

std::uint64_t config_digest(const TableConfig& config) {
  const auto bytes = encode_config_fields(config);
  return fmix64(fnv1a64(bytes.data(), bytes.size()));
}

std::vector<float> init_vector(const EmbeddingKey& key, const TableConfig& config) {
  const std::uint32_t n = config.stored_dim();
  std::vector<float> out(n, 0.0f);
  const auto& init = config.initializer;
  if (init.kind == InitializerKind::kZeros) return out;
  if (init.kind == InitializerKind::kConstant) {
    const float v = static_cast<float>(init.param);
    for (auto& x : out) x = v;
    return out;
  }

  // Bit-reproducible across platforms: splitmix64 stream seeded from the key
  // hash, explicit uniform/Box-Muller mapping. std::normal_distribution is
  // implementation-defined and must not be used here.
  std::uint64_t state = key_hash(key) ^ config.seed;
  if (init.kind == InitializerKind::kUniform) {
    const double r = init.param;
    for (auto& x : out) {
      const double u = unit_double(splitmix64_next(state));
      x = static_cast<float>(r * (2.0 * u - 1.0));
    }
    return out;
  }

  // Normal(0, sigma): Box-Muller, two draws per pair, pairs consumed in order.
  const double sigma = init.param;
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  std::uint32_t i = 0;
  while (i < n) {
    const double u1 = open_unit_double(splitmix64_next(state));
    const double u2 = unit_double(splitmix64_next(state));
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = kTwoPi * u2;
    out[i++] = static_cast<float>(sigma * radius * std::cos(angle));
    if (i < n) out[i++] = static_cast<float>(sigma * radius * std::sin(angle));
  }
  return out;
}

}  // namespace dynembed
