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

#include "dynembed/store.hpp"

#include <filesystem>
#include <unordered_set>

#include "dynembed/bloom.hpp"
#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"

namespace dynembed {

namespace {

void check_record_width(const SnapshotRecord& record, std::uint32_t stored_dim) {
  if (record.entry.vector.size() != stored_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "imported record width " + std::to_string(record.entry.vector.size()) +
                    " != stored_dim " + std::to_string(stored_dim));
  }
  for (const auto& [name, values] : record.entry.slots) {
    if (values.size() != stored_dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "imported slot '" + name + "' has wrong width");
    }
  }
}

}  // namespace

EmbeddingEntry EmbeddingStore::make_entry(const EmbeddingKey& key) const {
  EmbeddingEntry entry;
  entry.vector = init_vector(key, config_);
  return entry;
}

void EmbeddingStore::assign(const std::vector<SnapshotRecord>& assignments) {
  const std::uint32_t dim = stored_dim();
  for (const auto& record : assignments) {
    validate_key(record.key);
    check_record_width(record, dim);
    if (!all_finite(record.entry.vector)) {
      throw Error(ErrorCode::kNonFiniteValue,
                  "non-finite vector assigned to '" + record.key + "'");
    }
    for (const auto& [name, values] : record.entry.slots) {
      if (!all_finite(values)) {
        throw Error(ErrorCode::kNonFiniteValue,
                    "non-finite slot '" + name + "' assigned to '" + record.key + "'");
      }
    }
  }
  for (const auto& record : assignments) import_record(record);
}

std::uint64_t EmbeddingStore::state_digest() {
  const std::uint32_t dim = stored_dim();
  std::uint64_t digest = 0;
  for_each([&](const EmbeddingKey& key, const EmbeddingEntry& entry) {
    digest ^= record_digest(key, entry, dim);
  });
  return digest;
}

std::unique_ptr<EmbeddingStore> open_store(const TableConfig& config) {
  switch (config.backend.kind) {
    case BackendKind::kInMemory:
      return std::make_unique<InMemoryStore>(config);
    case BackendKind::kFileSnapshot:
      return std::make_unique<FileSnapshotStore>(config);
    case BackendKind::kCachedRemote:
      return std::make_unique<CachedRemoteStore>(
          config, find_remote_kv(config.backend.remote_name),
          config.backend.cache_capacity);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown backend kind");
}

std::uint64_t export_table(EmbeddingStore& store, SnapshotWriter& sink,
                           const CountingBloomFilter* admission) {
  const std::uint64_t cutoff = store.config().lifetime.frequency_cutoff;
  std::uint64_t written = 0;
  store.for_each([&](const EmbeddingKey& key, const EmbeddingEntry& entry) {
    if (entry.frequency < cutoff) return;
    if (admission && !admission->admitted(key)) return;
    sink.append(key, entry);
    ++written;
  });
  return written;
}

std::uint64_t import_table(EmbeddingStore& store,
                           const std::vector<SnapshotRecord>& records,
                           const std::function<bool(const EmbeddingKey&)>& keep) {
  std::uint64_t applied = 0;
  for (const auto& record : records) {
    if (keep && !keep(record.key)) continue;
    store.import_record(record);
    ++applied;
  }
  return applied;
}

// ---------------------------------------------------------------------------
// InMemoryStore

std::vector<std::optional<EmbeddingEntry>> InMemoryStore::lookup(
    const std::vector<EmbeddingKey>& keys, const LookupOptions& options) {
  for (const auto& key : keys) validate_key(key);
  std::vector<std::optional<EmbeddingEntry>> out;
  out.reserve(keys.size());

  if (!options.create_if_missing && !options.update_frequency) {
    std::shared_lock lock(mu_);
    for (const auto& key : keys) {
      auto it = data_.find(key);
      if (it == data_.end()) {
        out.emplace_back(std::nullopt);
      } else {
        out.emplace_back(it->second);
      }
    }
    return out;
  }

  std::unique_lock lock(mu_);
  for (const auto& key : keys) {
    auto it = data_.find(key);
    if (it == data_.end()) {
      if (!options.create_if_missing) {
        out.emplace_back(std::nullopt);
        continue;
      }
      it = data_.emplace(key, make_entry(key)).first;
    }
    if (options.update_frequency) it->second.frequency += 1;
    out.emplace_back(it->second);
  }
  return out;
}

void InMemoryStore::update(const std::vector<EmbeddingKey>& keys, std::uint64_t step,
                           const EntryMutator& mutate, bool count_frequency) {
  for (const auto& key : keys) validate_key(key);
  std::unique_lock lock(mu_);
  for (const auto& key : keys) {
    auto it = data_.find(key);
    if (it == data_.end()) it = data_.emplace(key, make_entry(key)).first;
    mutate(key, it->second);
    if (count_frequency) it->second.frequency += 1;
    it->second.last_update_step = step;
  }
}

void InMemoryStore::clear() {
  std::unique_lock lock(mu_);
  data_.clear();
}

void InMemoryStore::import_record(const SnapshotRecord& record) {
  validate_key(record.key);
  check_record_width(record, stored_dim());
  std::unique_lock lock(mu_);
  data_[record.key] = record.entry;
}

void InMemoryStore::for_each(const EntryVisitor& visit) {
  std::shared_lock lock(mu_);
  for (const auto& [key, entry] : data_) visit(key, entry);
}

std::uint64_t InMemoryStore::resident_count() {
  std::shared_lock lock(mu_);
  return data_.size();
}

// ---------------------------------------------------------------------------
// FileSnapshotStore

FileSnapshotStore::FileSnapshotStore(TableConfig config)
    : InMemoryStore(std::move(config)) {
  const std::string& path = config_.backend.path;
  if (!std::filesystem::exists(path)) return;  // fresh table
  SnapshotContents contents = read_snapshot(path);
  if (contents.config_digest != config_digest(config_)) {
    throw Error(ErrorCode::kDigestMismatch,
                path + ": snapshot was written under a different table config");
  }
  if (contents.stored_dim != stored_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                path + ": snapshot stored_dim does not match table config");
  }
  for (auto& record : contents.records) {
    data_.emplace(std::move(record.key), std::move(record.entry));
  }
}

// ---------------------------------------------------------------------------
// CachedRemoteStore

CachedRemoteStore::CachedRemoteStore(TableConfig config, std::shared_ptr<RemoteKv> kv,
                                     std::uint64_t cache_capacity)
    : EmbeddingStore(std::move(config)),
      kv_(std::move(kv)),
      capacity_(cache_capacity) {
  if (capacity_ == 0) {
    throw Error(ErrorCode::kInvalidConfig, "cache_capacity must be >= 1");
  }
  if (!kv_) {
    throw Error(ErrorCode::kBackendUnavailable, "cached_remote store requires a kv");
  }
  prefix_ = "t/" + config_.name + "/";
}

std::string CachedRemoteStore::kv_key(const EmbeddingKey& key) const {
  return prefix_ + key;
}

EmbeddingEntry* CachedRemoteStore::cache_find(const EmbeddingKey& key) {
  auto it = cache_.find(key);
  if (it == cache_.end()) return nullptr;
  recency_.splice(recency_.begin(), recency_, it->second.recency);
  return &it->second.entry;
}

void CachedRemoteStore::cache_insert(const EmbeddingKey& key, EmbeddingEntry entry) {
  auto it = cache_.find(key);
  if (it != cache_.end()) {
    it->second.entry = std::move(entry);
    recency_.splice(recency_.begin(), recency_, it->second.recency);
    return;
  }
  recency_.push_front(key);
  cache_.emplace(key, CacheSlot{std::move(entry), recency_.begin()});
  while (cache_.size() > capacity_) {
    // Write-through keeps the remote side current, so eviction is lossless.
    cache_.erase(recency_.back());
    recency_.pop_back();
  }
}

std::vector<std::optional<EmbeddingEntry>> CachedRemoteStore::lookup(
    const std::vector<EmbeddingKey>& keys, const LookupOptions& options) {
  for (const auto& key : keys) validate_key(key);
  std::lock_guard lock(mu_);

  // Work on a batch-local copy (as update() does): LRU eviction mid-batch
  // must not drop an entry this batch created or bumped before the final
  // write-through has landed it in the kv.
  std::unordered_map<EmbeddingKey, std::optional<EmbeddingEntry>> working;
  std::vector<std::string> miss_kv_keys;
  std::vector<const EmbeddingKey*> miss_keys;
  for (const auto& key : keys) {
    if (working.count(key)) continue;
    if (EmbeddingEntry* entry = cache_find(key)) {
      working.emplace(key, *entry);
    } else {
      miss_kv_keys.push_back(kv_key(key));
      miss_keys.push_back(&key);
      working.emplace(key, std::nullopt);  // resolved below
    }
  }
  if (!miss_kv_keys.empty()) {
    auto values = kv_->get(miss_kv_keys);
    for (std::size_t i = 0; i < miss_keys.size(); ++i) {
      if (!values[i]) continue;
      SnapshotRecord rec = decode_record(
          reinterpret_cast<const std::uint8_t*>(values[i]->data()),
          values[i]->size(), stored_dim());
      if (rec.key != *miss_keys[i]) {
        throw Error(ErrorCode::kFormatError, "remote kv record key mismatch");
      }
      working[*miss_keys[i]] = std::move(rec.entry);
    }
  }

  std::vector<std::optional<EmbeddingEntry>> out;
  out.reserve(keys.size());
  std::vector<const EmbeddingKey*> dirty;
  std::unordered_set<std::string_view> dirty_seen;
  for (const auto& key : keys) {
    std::optional<EmbeddingEntry>& slot = working.at(key);
    if (!slot && options.create_if_missing) {
      slot = make_entry(key);
      if (dirty_seen.insert(key).second) dirty.push_back(&key);
    }
    if (!slot) {
      out.emplace_back(std::nullopt);
      continue;
    }
    if (options.update_frequency) {
      slot->frequency += 1;
      if (dirty_seen.insert(key).second) dirty.push_back(&key);
    }
    out.emplace_back(*slot);
  }

  if (!dirty.empty()) {
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs.reserve(dirty.size());
    const std::uint32_t dim = stored_dim();
    for (const EmbeddingKey* key : dirty) {
      std::vector<std::uint8_t> buf;
      encode_record(buf, *key, *working.at(*key), dim);
      pairs.emplace_back(
          kv_key(*key),
          std::string(reinterpret_cast<const char*>(buf.data()), buf.size()));
    }
    kv_->put(pairs);
  }

  // Only now that the kv holds every dirty entry is eviction lossless.
  for (const auto& key : keys) {
    auto it = working.find(key);
    if (it != working.end() && it->second) {
      cache_insert(key, std::move(*it->second));
      working.erase(it);
    }
  }
  return out;
}

void CachedRemoteStore::update(const std::vector<EmbeddingKey>& keys,
                               std::uint64_t step, const EntryMutator& mutate,
                               bool count_frequency) {
  for (const auto& key : keys) validate_key(key);
  std::lock_guard lock(mu_);

  // Work on a batch-local copy so LRU eviction mid-batch cannot drop an entry
  // that a later duplicate occurrence still needs.
  std::unordered_map<EmbeddingKey, EmbeddingEntry> working;
  std::vector<std::string> miss_kv_keys;
  std::vector<const EmbeddingKey*> miss_keys;
  for (const auto& key : keys) {
    if (working.count(key)) continue;
    if (EmbeddingEntry* entry = cache_find(key)) {
      working.emplace(key, *entry);
    } else {
      miss_kv_keys.push_back(kv_key(key));
      miss_keys.push_back(&key);
      working.emplace(key, EmbeddingEntry{});  // placeholder, filled below
    }
  }
  if (!miss_kv_keys.empty()) {
    auto values = kv_->get(miss_kv_keys);
    for (std::size_t i = 0; i < miss_keys.size(); ++i) {
      if (values[i]) {
        SnapshotRecord rec = decode_record(
            reinterpret_cast<const std::uint8_t*>(values[i]->data()),
            values[i]->size(), stored_dim());
        working[*miss_keys[i]] = std::move(rec.entry);
      } else {
        working[*miss_keys[i]] = make_entry(*miss_keys[i]);
      }
    }
  }

  for (const auto& key : keys) {
    EmbeddingEntry& entry = working.at(key);
    mutate(key, entry);
    if (count_frequency) entry.frequency += 1;
    entry.last_update_step = step;
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(working.size());
  const std::uint32_t dim = stored_dim();
  for (const auto& [key, entry] : working) {
    std::vector<std::uint8_t> buf;
    encode_record(buf, key, entry, dim);
    pairs.emplace_back(kv_key(key),
                       std::string(reinterpret_cast<const char*>(buf.data()), buf.size()));
  }
  kv_->put(pairs);
  for (auto& [key, entry] : working) cache_insert(key, std::move(entry));
}

void CachedRemoteStore::clear() {
  std::lock_guard lock(mu_);
  auto keys = kv_->scan_prefix(prefix_);
  if (!keys.empty()) kv_->del(keys);
  cache_.clear();
  recency_.clear();
}

void CachedRemoteStore::import_record(const SnapshotRecord& record) {
  validate_key(record.key);
  check_record_width(record, stored_dim());
  std::lock_guard lock(mu_);
  std::vector<std::uint8_t> buf;
  encode_record(buf, record.key, record.entry, stored_dim());
  kv_->put({{kv_key(record.key),
             std::string(reinterpret_cast<const char*>(buf.data()), buf.size())}});
  cache_insert(record.key, record.entry);
}

void CachedRemoteStore::for_each(const EntryVisitor& visit) {
  // Streams from the remote side (authoritative thanks to write-through)
  // without disturbing cache recency.
  std::lock_guard lock(mu_);
  const std::vector<std::string> kv_keys = kv_->scan_prefix(prefix_);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < kv_keys.size(); start += kChunk) {
    const std::size_t end = std::min(kv_keys.size(), start + kChunk);
    std::vector<std::string> chunk(kv_keys.begin() + start, kv_keys.begin() + end);
    auto values = kv_->get(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      if (!values[i]) {
        throw Error(ErrorCode::kBackendUnavailable,
                    "remote kv dropped key during scan: " + chunk[i]);
      }
      SnapshotRecord rec = decode_record(
          reinterpret_cast<const std::uint8_t*>(values[i]->data()),
          values[i]->size(), stored_dim());
      visit(rec.key, rec.entry);
    }
  }
}

std::uint64_t CachedRemoteStore::resident_count() {
  std::lock_guard lock(mu_);
  return kv_->scan_prefix(prefix_).size();
}

std::uint64_t CachedRemoteStore::cached_count() {
  std::lock_guard lock(mu_);
  return cache_.size();
}

}  // namespace dynembed
