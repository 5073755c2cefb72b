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
#include <string_view>
#include <vector>

#include "dynembed/config.hpp"

namespace dynembed {

// Counting Bloom filter with 4-bit saturating counters, used as an export
// gate: keys seen fewer than `admit_threshold` times are treated as not yet
// admitted and skipped when a shard is exported. Counters never decrement,
// so a sighted key can only become admitted, never lose admission.
class CountingBloomFilter {
 public:
  CountingBloomFilter(std::uint64_t expected_keys, double false_positive_rate,
                      std::uint64_t admit_threshold);

  explicit CountingBloomFilter(const BloomSpec& spec)
      : CountingBloomFilter(spec.expected_keys, spec.target_false_positive_rate,
                            spec.admit_threshold) {}

  // Records one sighting and reports whether the key is now admitted
  // (i.e. its minimum counter reached admit_threshold).
  bool sight(std::string_view key);

  // Non-mutating admission check; used when exporting.
  bool admitted(std::string_view key) const;

  // Minimum counter across the key's cells — an upper bound on how often the
  // key was sighted (collisions only inflate it).
  std::uint64_t estimated_count(std::string_view key) const;

  std::uint64_t cell_count() const noexcept { return cells_; }
  std::uint32_t hash_count() const noexcept { return hashes_; }
  std::uint64_t admit_threshold() const noexcept { return admit_threshold_; }

 private:
  std::uint8_t cell(std::uint64_t index) const;
  void bump(std::uint64_t index);

  std::uint64_t cells_ = 0;
  std::uint32_t hashes_ = 0;
  std::uint64_t admit_threshold_ = 1;
  std::vector<std::uint8_t> data_;  // two 4-bit counters per byte
};

}  // namespace dynembed
