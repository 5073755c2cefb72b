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
#include <cstdio>
#include <string>
#include <vector>

#include "dynembed/types.hpp"

namespace dynembed {

// Snapshot file layout (all integers little-endian, docs/protocol.md):
//
//   magic            8 bytes  "DESNAP01"
//   config_digest    u64
//   stored_dim       u32
//   record_count     u64
//   record_count x record
//
// record:
//   key_len          u32
//   key              key_len bytes
//   frequency        u64
//   last_update_step u64
//   slot_count       u16
//   slot_count x { name_len u16, name bytes, stored_dim x f32 }
//   vector           stored_dim x f32
//
// Slots precede the primary vector. Slot order is lexicographic by name
// (EmbeddingEntry keeps them in an ordered map), making the record encoding
// canonical: equal entries encode to equal bytes.

inline constexpr char kSnapshotMagic[8] = {'D', 'E', 'S', 'N', 'A', 'P', '0', '1'};

struct SnapshotRecord {
  EmbeddingKey key;
  EmbeddingEntry entry;

  bool operator==(const SnapshotRecord&) const = default;
};

// Appends the canonical record encoding to `out`. Throws
// Error(kDimensionMismatch) if the entry's vector or any slot is not
// stored_dim wide.
void encode_record(std::vector<std::uint8_t>& out, const EmbeddingKey& key,
                   const EmbeddingEntry& entry, std::uint32_t stored_dim);

// 64-bit digest of one record's canonical encoding. Table state digests XOR
// these per-record values, making them independent of iteration order.
std::uint64_t record_digest(const EmbeddingKey& key, const EmbeddingEntry& entry,
                            std::uint32_t stored_dim);

// Parses exactly one canonical record (the key is embedded in the encoding).
// Throws Error(kFormatError) on truncation or trailing bytes.
SnapshotRecord decode_record(const std::uint8_t* data, std::size_t size,
                             std::uint32_t stored_dim);

// Streaming writer. Records are written in append() order; finalize() patches
// the record count and flushes. Any I/O failure throws
// Error(kSinkWriteFailure) and leaves the file unusable.
class SnapshotWriter {
 public:
  SnapshotWriter(const std::string& path, std::uint64_t config_digest,
                 std::uint32_t stored_dim);
  ~SnapshotWriter();

  SnapshotWriter(const SnapshotWriter&) = delete;
  SnapshotWriter& operator=(const SnapshotWriter&) = delete;

  void append(const EmbeddingKey& key, const EmbeddingEntry& entry);
  void finalize();

  std::uint64_t record_count() const noexcept { return count_; }

 private:
  std::string path_;
  std::FILE* file_ = nullptr;
  std::uint32_t stored_dim_ = 0;
  std::uint64_t count_ = 0;
  bool finalized_ = false;
};

struct SnapshotContents {
  std::uint64_t config_digest = 0;
  std::uint32_t stored_dim = 0;
  std::vector<SnapshotRecord> records;
};

// Reads and validates an entire snapshot. Throws Error(kFormatError) on a bad
// magic, truncation, trailing bytes, or malformed records;
// Error(kSinkWriteFailure) if the file cannot be opened.
SnapshotContents read_snapshot(const std::string& path);

}  // namespace dynembed
