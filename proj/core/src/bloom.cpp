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

#include "dynembed/bloom.hpp"

#include <algorithm>
#include <cmath>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"

namespace dynembed {

namespace {

constexpr std::uint8_t kCounterMax = 0xF;  // 4-bit saturating

// Double hashing: cell_i = (h1 + i * h2) mod cells. Derives both streams
// from one pass over the key.
struct KeyHashes {
  std::uint64_t h1;
  std::uint64_t h2;
};

KeyHashes hash_key(std::string_view key) {
  const std::uint64_t h = fnv1a64(key);
  KeyHashes out;
  out.h1 = fmix64(h);
  out.h2 = fmix64(h ^ 0x9e3779b97f4a7c15ULL) | 1ULL;  // odd, never degenerate
  return out;
}

}  // namespace

CountingBloomFilter::CountingBloomFilter(std::uint64_t expected_keys,
                                         double false_positive_rate,
                                         std::uint64_t admit_threshold)
    : admit_threshold_(admit_threshold) {
  if (expected_keys == 0) {
    throw Error(ErrorCode::kInvalidConfig, "bloom expected_keys must be >= 1");
  }
  if (!(false_positive_rate > 0.0) || false_positive_rate > 0.1) {
    throw Error(ErrorCode::kInvalidConfig,
                "bloom false_positive_rate must be in (0, 0.1]");
  }
  if (admit_threshold == 0 || admit_threshold > kCounterMax) {
    throw Error(ErrorCode::kInvalidConfig,
                "bloom admit_threshold must be in [1, 15]");
  }
  // Standard sizing: m = -n ln(p) / (ln 2)^2 cells, k = (m/n) ln 2 hashes.
  const double n = static_cast<double>(expected_keys);
  const double ln2 = 0.69314718055994530942;
  const double m = std::ceil(-n * std::log(false_positive_rate) / (ln2 * ln2));
  cells_ = std::max<std::uint64_t>(64, static_cast<std::uint64_t>(m));
  const double k = std::round(m / n * ln2);
  hashes_ = static_cast<std::uint32_t>(std::clamp(k, 1.0, 16.0));
  data_.assign((cells_ + 1) / 2, 0);
}

std::uint8_t CountingBloomFilter::cell(std::uint64_t index) const {
  const std::uint8_t byte = data_[index >> 1];
  return (index & 1) ? (byte >> 4) : (byte & 0x0F);
}

void CountingBloomFilter::bump(std::uint64_t index) {
  std::uint8_t& byte = data_[index >> 1];
  if (index & 1) {
    std::uint8_t hi = byte >> 4;
    if (hi < kCounterMax) byte = static_cast<std::uint8_t>((byte & 0x0F) | ((hi + 1) << 4));
  } else {
    std::uint8_t lo = byte & 0x0F;
    if (lo < kCounterMax) byte = static_cast<std::uint8_t>((byte & 0xF0) | (lo + 1));
  }
}

bool CountingBloomFilter::sight(std::string_view key) {
  const KeyHashes h = hash_key(key);
  std::uint8_t min_count = kCounterMax;
  for (std::uint32_t i = 0; i < hashes_; ++i) {
    const std::uint64_t index = (h.h1 + i * h.h2) % cells_;
    bump(index);
    min_count = std::min(min_count, cell(index));
  }
  return min_count >= admit_threshold_;
}

bool CountingBloomFilter::admitted(std::string_view key) const {
  return estimated_count(key) >= admit_threshold_;
}

std::uint64_t CountingBloomFilter::estimated_count(std::string_view key) const {
  const KeyHashes h = hash_key(key);
  std::uint8_t min_count = kCounterMax;
  for (std::uint32_t i = 0; i < hashes_; ++i) {
    const std::uint64_t index = (h.h1 + i * h.h2) % cells_;
    min_count = std::min(min_count, cell(index));
  }
  return min_count;
}

}  // namespace dynembed
