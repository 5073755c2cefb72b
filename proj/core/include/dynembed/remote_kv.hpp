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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dynembed {

// Minimal remote key-value contract the cached store is built on: batched
// point reads, durable batched writes, and ordered prefix scans. Values are
// opaque byte strings.
class RemoteKv {
 public:
  virtual ~RemoteKv() = default;

  // One result per requested key, in request order; nullopt for absent keys.
  virtual std::vector<std::optional<std::string>> get(
      const std::vector<std::string>& keys) = 0;

  // All pairs must be durable (or at least handed to the OS) before this
  // returns; callers treat a returned put as an acknowledged write.
  virtual void put(
      const std::vector<std::pair<std::string, std::string>>& pairs) = 0;

  // Removes the keys (absent keys are ignored). Durable like put.
  virtual void del(const std::vector<std::string>& keys) = 0;

  // Keys with the given prefix, in ascending byte order.
  virtual std::vector<std::string> scan_prefix(const std::string& prefix) = 0;
};

// Plain in-process map. Not durable; exists for tests and the `remote:`
// worker backend, where the authoritative side is a process-local fake.
class InProcessRemoteKv : public RemoteKv {
 public:
  std::vector<std::optional<std::string>> get(
      const std::vector<std::string>& keys) override;
  void put(const std::vector<std::pair<std::string, std::string>>& pairs) override;
  void del(const std::vector<std::string>& keys) override;
  std::vector<std::string> scan_prefix(const std::string& prefix) override;

 private:
  std::mutex mu_;
  std::map<std::string, std::string> data_;
};

// Append-only log under `dir` (single file "kv.log"), replayed into memory on
// open. Every put is flushed to the OS before it is acknowledged, so state
// survives an abrupt process or server stop. A torn final record (crash mid
// append) is ignored on replay. Deletes append tombstone records (the value
// length sentinel 0xffffffff).
class FileRemoteKv : public RemoteKv {
 public:
  explicit FileRemoteKv(const std::string& dir);
  ~FileRemoteKv() override;

  std::vector<std::optional<std::string>> get(
      const std::vector<std::string>& keys) override;
  void put(const std::vector<std::pair<std::string, std::string>>& pairs) override;
  void del(const std::vector<std::string>& keys) override;
  std::vector<std::string> scan_prefix(const std::string& prefix) override;

 private:
  void append_records(const std::string& buf);

  std::mutex mu_;
  std::string log_path_;
  std::FILE* log_ = nullptr;
  std::map<std::string, std::string> data_;
};

// Process-wide registry for `remote:NAME` backends. Registering the same name
// twice replaces the instance; lookup of an unknown name throws
// Error(kBackendUnavailable).
void register_remote_kv(const std::string& name, std::shared_ptr<RemoteKv> kv);
std::shared_ptr<RemoteKv> find_remote_kv(const std::string& name);
bool remote_kv_registered(const std::string& name);

}  // namespace dynembed
