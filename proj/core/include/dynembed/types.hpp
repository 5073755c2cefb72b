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

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dynembed/error.hpp"

namespace dynembed {

// Keys are arbitrary byte strings, compared by exact byte equality.
// Valid keys are 1 byte to 64 KiB long.
using EmbeddingKey = std::string;

inline constexpr std::size_t kMaxKeyBytes = 64 * 1024;

inline void validate_key(std::string_view key) {
  if (key.empty()) {
    throw Error(ErrorCode::kInvalidKey, "empty key");
  }
  if (key.size() > kMaxKeyBytes) {
    throw Error(ErrorCode::kKeyTooLarge,
                "key of " + std::to_string(key.size()) + " bytes exceeds 64 KiB");
  }
}

// One key's mutable state: the stored vector (embedding, plus the bias as the
// last position for has_bias tables), an update counter, and named optimizer
// slot vectors of the same length.
struct EmbeddingEntry {
  std::vector<float> vector;
  std::uint64_t frequency = 0;
  std::uint64_t last_update_step = 0;
  // Ordered map: slot iteration order is part of the snapshot byte format.
  std::map<std::string, std::vector<float>> slots;

  bool operator==(const EmbeddingEntry& other) const = default;
};

inline bool all_finite(const std::vector<float>& values) noexcept {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace dynembed
