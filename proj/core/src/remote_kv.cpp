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

#include "dynembed/remote_kv.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <unordered_map>

#include "dynembed/error.hpp"

namespace dynembed {

std::vector<std::optional<std::string>> InProcessRemoteKv::get(
    const std::vector<std::string>& keys) {
  std::lock_guard lock(mu_);
  std::vector<std::optional<std::string>> out;
  out.reserve(keys.size());
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

void InProcessRemoteKv::put(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::lock_guard lock(mu_);
  for (const auto& [key, value] : pairs) data_[key] = value;
}

void InProcessRemoteKv::del(const std::vector<std::string>& keys) {
  std::lock_guard lock(mu_);
  for (const auto& key : keys) data_.erase(key);
}

std::vector<std::string> InProcessRemoteKv::scan_prefix(const std::string& prefix) {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (auto it = data_.lower_bound(prefix); it != data_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

namespace {

// Log record: u32 key_len, u32 value_len, key bytes, value bytes. A
// value_len of kTombstone marks a delete and carries no value bytes.
inline constexpr std::uint32_t kTombstone = 0xffffffffu;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

bool read_u32(std::FILE* f, std::uint32_t& v) {
  std::uint8_t buf[4];
  if (std::fread(buf, 1, 4, f) != 4) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return true;
}

}  // namespace

FileRemoteKv::FileRemoteKv(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kBackendUnavailable,
                "cannot create kv directory " + dir + ": " + ec.message());
  }
  log_path_ = (std::filesystem::path(dir) / "kv.log").string();

  // Replay whatever prefix of the log is intact; stop at the first torn record.
  if (std::FILE* f = std::fopen(log_path_.c_str(), "rb")) {
    for (;;) {
      std::uint32_t key_len = 0;
      std::uint32_t value_len = 0;
      if (!read_u32(f, key_len) || !read_u32(f, value_len)) break;
      std::string key(key_len, '\0');
      if (key_len > 0 && std::fread(key.data(), 1, key_len, f) != key_len) break;
      if (value_len == kTombstone) {
        data_.erase(key);
        continue;
      }
      std::string value(value_len, '\0');
      if (value_len > 0 && std::fread(value.data(), 1, value_len, f) != value_len) break;
      data_[std::move(key)] = std::move(value);
    }
    std::fclose(f);
  }

  log_ = std::fopen(log_path_.c_str(), "ab");
  if (!log_) {
    throw Error(ErrorCode::kBackendUnavailable, "cannot open " + log_path_);
  }
}

FileRemoteKv::~FileRemoteKv() {
  if (log_) std::fclose(log_);
}

std::vector<std::optional<std::string>> FileRemoteKv::get(
    const std::vector<std::string>& keys) {
  std::lock_guard lock(mu_);
  std::vector<std::optional<std::string>> out;
  out.reserve(keys.size());
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

void FileRemoteKv::append_records(const std::string& buf) {
  if (std::fwrite(buf.data(), 1, buf.size(), log_) != buf.size() ||
      std::fflush(log_) != 0) {
    throw Error(ErrorCode::kSinkWriteFailure, "append failed on " + log_path_);
  }
}

void FileRemoteKv::put(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::lock_guard lock(mu_);
  std::string buf;
  for (const auto& [key, value] : pairs) {
    append_u32(buf, static_cast<std::uint32_t>(key.size()));
    append_u32(buf, static_cast<std::uint32_t>(value.size()));
    buf.append(key);
    buf.append(value);
  }
  append_records(buf);
  for (const auto& [key, value] : pairs) data_[key] = value;
}

void FileRemoteKv::del(const std::vector<std::string>& keys) {
  std::lock_guard lock(mu_);
  std::string buf;
  for (const auto& key : keys) {
    append_u32(buf, static_cast<std::uint32_t>(key.size()));
    append_u32(buf, kTombstone);
    buf.append(key);
  }
  append_records(buf);
  for (const auto& key : keys) data_.erase(key);
}

std::vector<std::string> FileRemoteKv::scan_prefix(const std::string& prefix) {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (auto it = data_.lower_bound(prefix); it != data_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.push_back(it->first);
  }
  return out;
}

namespace {

std::mutex g_registry_mu;
std::unordered_map<std::string, std::shared_ptr<RemoteKv>>& registry() {
  static auto* map = new std::unordered_map<std::string, std::shared_ptr<RemoteKv>>();
  return *map;
}

}  // namespace

void register_remote_kv(const std::string& name, std::shared_ptr<RemoteKv> kv) {
  std::lock_guard lock(g_registry_mu);
  registry()[name] = std::move(kv);
}

std::shared_ptr<RemoteKv> find_remote_kv(const std::string& name) {
  std::lock_guard lock(g_registry_mu);
  auto it = registry().find(name);
  if (it == registry().end()) {
    throw Error(ErrorCode::kBackendUnavailable,
                "no remote kv registered under '" + name + "'");
  }
  return it->second;
}

bool remote_kv_registered(const std::string& name) {
  std::lock_guard lock(g_registry_mu);
  return registry().count(name) > 0;
}

}  // namespace dynembed
