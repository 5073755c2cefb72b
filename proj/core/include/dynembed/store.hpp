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
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynembed/config.hpp"
#include "dynembed/remote_kv.hpp"
#include "dynembed/snapshot.hpp"
#include "dynembed/types.hpp"

namespace dynembed {

struct LookupOptions {
  // Absent keys are materialized with the table's deterministic initializer.
  bool create_if_missing = false;
  // Count this lookup toward each key's frequency (one bump per occurrence).
  bool update_frequency = false;
};

using EntryMutator = std::function<void(const EmbeddingKey&, EmbeddingEntry&)>;
using EntryVisitor = std::function<void(const EmbeddingKey&, const EmbeddingEntry&)>;

// One table shard's storage. All methods are thread-safe per instance.
// The three backends are observationally equivalent: the same call trace
// yields the same lookup results and the same state digest on each.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(TableConfig config) : config_(std::move(config)) {}
  virtual ~EmbeddingStore() = default;

  EmbeddingStore(const EmbeddingStore&) = delete;
  EmbeddingStore& operator=(const EmbeddingStore&) = delete;

  const TableConfig& config() const noexcept { return config_; }
  std::uint32_t stored_dim() const noexcept { return config_.stored_dim(); }

  // One result per key, in request order; duplicates are served per
  // occurrence. Keys are validated (throws kInvalidKey / kKeyTooLarge).
  virtual std::vector<std::optional<EmbeddingEntry>> lookup(
      const std::vector<EmbeddingKey>& keys, const LookupOptions& options) = 0;

  // Read-modify-write. Each key's entry is materialized if absent, passed to
  // `mutate`, then bookkeeping applies: last_update_step = step and, when
  // count_frequency, frequency += 1. Duplicate keys are mutated per
  // occurrence.
  virtual void update(const std::vector<EmbeddingKey>& keys, std::uint64_t step,
                      const EntryMutator& mutate, bool count_frequency = true) = 0;

  // Whole-entry assignment with read-your-writes per key: a later lookup of
  // the key returns exactly the written entry. Validates widths and
  // finiteness before writing anything.
  void assign(const std::vector<SnapshotRecord>& assignments);

  // Restore path: overwrites the entry verbatim, no bookkeeping.
  virtual void import_record(const SnapshotRecord& record) = 0;

  // Drops every resident entry. Restore uses clear + import so the resulting
  // state is exactly the checkpoint, not a merge with leftovers.
  virtual void clear() = 0;

  // Visits every resident entry in ascending key order. "Resident" means the
  // authoritative contents of this shard, not what happens to be cached.
  virtual void for_each(const EntryVisitor& visit) = 0;

  virtual std::uint64_t resident_count() = 0;

  // XOR of per-record digests; independent of iteration order, equal iff the
  // multiset of records is equal (up to 64-bit collision odds).
  std::uint64_t state_digest();

 protected:
  EmbeddingEntry make_entry(const EmbeddingKey& key) const;

  TableConfig config_;
};

// Backend resolved from config.backend:
//   in_memory     -> InMemoryStore
//   file_snapshot -> FileSnapshotStore (preloads the snapshot if present)
//   cached_remote -> CachedRemoteStore over the registered RemoteKv
std::unique_ptr<EmbeddingStore> open_store(const TableConfig& config);

// Persistence gate: writes every resident entry whose frequency is at least
// lifetime.frequency_cutoff and, when an admission filter is given, that the
// filter admits. Returns the number of records written (in ascending key
// order, so equal state yields byte-identical files).
class CountingBloomFilter;
std::uint64_t export_table(EmbeddingStore& store, SnapshotWriter& sink,
                           const CountingBloomFilter* admission = nullptr);

// Imports records (overwriting existing keys) and returns how many were
// applied. `keep` filters records before import — the re-partition path
// passes a shard ownership predicate; nullptr keeps everything.
std::uint64_t import_table(EmbeddingStore& store,
                           const std::vector<SnapshotRecord>& records,
                           const std::function<bool(const EmbeddingKey&)>& keep = {});

// Map-backed store; the ordered map is the authoritative state.
class InMemoryStore : public EmbeddingStore {
 public:
  explicit InMemoryStore(TableConfig config) : EmbeddingStore(std::move(config)) {}

  std::vector<std::optional<EmbeddingEntry>> lookup(
      const std::vector<EmbeddingKey>& keys, const LookupOptions& options) override;
  void update(const std::vector<EmbeddingKey>& keys, std::uint64_t step,
              const EntryMutator& mutate, bool count_frequency = true) override;
  void import_record(const SnapshotRecord& record) override;
  void clear() override;
  void for_each(const EntryVisitor& visit) override;
  std::uint64_t resident_count() override;

 protected:
  std::shared_mutex mu_;
  std::map<EmbeddingKey, EmbeddingEntry> data_;
};

// InMemoryStore preloaded from a snapshot file at open. The file itself is
// never written back; persistence goes through explicit checkpoint exports.
// A missing file is an empty store; a malformed file throws kFormatError and
// a digest mismatch throws kDigestMismatch.
class FileSnapshotStore : public InMemoryStore {
 public:
  explicit FileSnapshotStore(TableConfig config);
};

// Write-through LRU cache over a remote key-value store; the remote side is
// authoritative. Only point lookups and updates touch the cache — full-table
// visits stream straight from the remote store, so a cold cache and a warm
// cache are indistinguishable to callers.
class CachedRemoteStore : public EmbeddingStore {
 public:
  CachedRemoteStore(TableConfig config, std::shared_ptr<RemoteKv> kv,
                    std::uint64_t cache_capacity);

  std::vector<std::optional<EmbeddingEntry>> lookup(
      const std::vector<EmbeddingKey>& keys, const LookupOptions& options) override;
  void update(const std::vector<EmbeddingKey>& keys, std::uint64_t step,
              const EntryMutator& mutate, bool count_frequency = true) override;
  void import_record(const SnapshotRecord& record) override;
  void clear() override;
  void for_each(const EntryVisitor& visit) override;
  std::uint64_t resident_count() override;

  std::uint64_t cached_count();

 private:
  struct CacheSlot {
    EmbeddingEntry entry;
    std::list<EmbeddingKey>::iterator recency;
  };

  std::string kv_key(const EmbeddingKey& key) const;

  // All cache operations run under mu_.
  EmbeddingEntry* cache_find(const EmbeddingKey& key);
  void cache_insert(const EmbeddingKey& key, EmbeddingEntry entry);

  std::mutex mu_;
  std::shared_ptr<RemoteKv> kv_;
  std::uint64_t capacity_;
  std::string prefix_;
  std::list<EmbeddingKey> recency_;  // front = most recently used
  std::unordered_map<EmbeddingKey, CacheSlot> cache_;
};

}  // namespace dynembed
