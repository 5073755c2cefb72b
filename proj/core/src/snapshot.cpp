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

#include "dynembed/snapshot.hpp"

#include <cstring>
#include <limits>

#include "dynembed/error.hpp"
#include "dynembed/hash.hpp"

namespace dynembed {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32s(std::vector<std::uint8_t>& out, const std::vector<float>& values) {
  static_assert(sizeof(float) == 4);
  const std::size_t offset = out.size();
  out.resize(offset + values.size() * 4);
  std::memcpy(out.data() + offset, values.data(), values.size() * 4);
}

// Bounds-checked little-endian cursor over a byte buffer.
class Cursor {
 public:
  Cursor(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(u(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
  std::uint64_t u64() { return u(8); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    std::memcpy(v.data(), data_ + pos_, n * 4);
    pos_ += n * 4;
    return v;
  }

  std::size_t remaining() const { return size_ - pos_; }

 private:
  std::uint64_t u(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  void need(std::size_t n) const {
    if (size_ - pos_ < n) {
      throw Error(ErrorCode::kFormatError, "snapshot truncated");
    }
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

void encode_record(std::vector<std::uint8_t>& out, const EmbeddingKey& key,
                   const EmbeddingEntry& entry, std::uint32_t stored_dim) {
  if (entry.vector.size() != stored_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "record vector width " + std::to_string(entry.vector.size()) +
                    " != stored_dim " + std::to_string(stored_dim));
  }
  if (entry.slots.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorCode::kFormatError, "too many optimizer slots");
  }
  put_u32(out, static_cast<std::uint32_t>(key.size()));
  out.insert(out.end(), key.begin(), key.end());
  put_u64(out, entry.frequency);
  put_u64(out, entry.last_update_step);
  put_u16(out, static_cast<std::uint16_t>(entry.slots.size()));
  for (const auto& [name, values] : entry.slots) {
    if (values.size() != stored_dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "slot '" + name + "' width " + std::to_string(values.size()) +
                      " != stored_dim " + std::to_string(stored_dim));
    }
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw Error(ErrorCode::kFormatError, "slot name too long");
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_f32s(out, values);
  }
  put_f32s(out, entry.vector);
}

std::uint64_t record_digest(const EmbeddingKey& key, const EmbeddingEntry& entry,
                            std::uint32_t stored_dim) {
  std::vector<std::uint8_t> buf;
  buf.reserve(key.size() + 32 + (entry.slots.size() + 1) * stored_dim * 4);
  encode_record(buf, key, entry, stored_dim);
  return fmix64(fnv1a64(buf.data(), buf.size()));
}

SnapshotRecord decode_record(const std::uint8_t* data, std::size_t size,
                             std::uint32_t stored_dim) {
  Cursor cur(data, size);
  SnapshotRecord rec;
  const std::uint32_t key_len = cur.u32();
  if (key_len == 0 || key_len > kMaxKeyBytes) {
    throw Error(ErrorCode::kFormatError, "record key length out of range");
  }
  rec.key = cur.bytes(key_len);
  rec.entry.frequency = cur.u64();
  rec.entry.last_update_step = cur.u64();
  const std::uint16_t slot_count = cur.u16();
  for (std::uint16_t s = 0; s < slot_count; ++s) {
    const std::uint16_t name_len = cur.u16();
    std::string name = cur.bytes(name_len);
    rec.entry.slots[std::move(name)] = cur.f32s(stored_dim);
  }
  rec.entry.vector = cur.f32s(stored_dim);
  if (cur.remaining() != 0) {
    throw Error(ErrorCode::kFormatError, "trailing bytes after record");
  }
  return rec;
}

SnapshotWriter::SnapshotWriter(const std::string& path, std::uint64_t config_digest,
                               std::uint32_t stored_dim)
    : path_(path), stored_dim_(stored_dim) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) {
    throw Error(ErrorCode::kSinkWriteFailure, "cannot open " + path + " for writing");
  }
  std::vector<std::uint8_t> header;
  header.insert(header.end(), kSnapshotMagic, kSnapshotMagic + 8);
  put_u64(header, config_digest);
  put_u32(header, stored_dim);
  put_u64(header, 0);  // record_count, patched by finalize()
  if (std::fwrite(header.data(), 1, header.size(), file_) != header.size()) {
    std::fclose(file_);
    file_ = nullptr;
    throw Error(ErrorCode::kSinkWriteFailure, "short write on " + path);
  }
}

SnapshotWriter::~SnapshotWriter() {
  if (file_) std::fclose(file_);
}

void SnapshotWriter::append(const EmbeddingKey& key, const EmbeddingEntry& entry) {
  if (!file_ || finalized_) {
    throw Error(ErrorCode::kSinkWriteFailure, "snapshot writer is closed");
  }
  std::vector<std::uint8_t> buf;
  encode_record(buf, key, entry, stored_dim_);
  if (std::fwrite(buf.data(), 1, buf.size(), file_) != buf.size()) {
    throw Error(ErrorCode::kSinkWriteFailure, "short write on " + path_);
  }
  ++count_;
}

void SnapshotWriter::finalize() {
  if (!file_ || finalized_) {
    throw Error(ErrorCode::kSinkWriteFailure, "snapshot writer is closed");
  }
  finalized_ = true;
  std::vector<std::uint8_t> count_bytes;
  put_u64(count_bytes, count_);
  // record_count lives at offset 20: magic(8) + config_digest(8) + stored_dim(4).
  const bool ok = std::fseek(file_, 20, SEEK_SET) == 0 &&
                  std::fwrite(count_bytes.data(), 1, 8, file_) == 8 &&
                  std::fflush(file_) == 0;
  const bool closed = std::fclose(file_) == 0;
  file_ = nullptr;
  if (!ok || !closed) {
    throw Error(ErrorCode::kSinkWriteFailure, "cannot finalize " + path_);
  }
}

SnapshotContents read_snapshot(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) {
    throw Error(ErrorCode::kSinkWriteFailure, "cannot open " + path + " for reading");
  }
  std::vector<std::uint8_t> data;
  std::uint8_t chunk[1 << 16];
  std::size_t n;
  while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) {
    data.insert(data.end(), chunk, chunk + n);
  }
  const bool read_error = std::ferror(f) != 0;
  std::fclose(f);
  if (read_error) {
    throw Error(ErrorCode::kSinkWriteFailure, "read error on " + path);
  }

  Cursor cur(data.data(), data.size());
  const std::string magic = cur.bytes(8);
  if (std::memcmp(magic.data(), kSnapshotMagic, 8) != 0) {
    throw Error(ErrorCode::kFormatError, path + ": bad snapshot magic");
  }
  SnapshotContents out;
  out.config_digest = cur.u64();
  out.stored_dim = cur.u32();
  if (out.stored_dim == 0) {
    throw Error(ErrorCode::kFormatError, path + ": stored_dim is zero");
  }
  const std::uint64_t record_count = cur.u64();
  out.records.reserve(record_count);
  for (std::uint64_t r = 0; r < record_count; ++r) {
    SnapshotRecord rec;
    const std::uint32_t key_len = cur.u32();
    if (key_len == 0 || key_len > kMaxKeyBytes) {
      throw Error(ErrorCode::kFormatError, path + ": record key length out of range");
    }
    rec.key = cur.bytes(key_len);
    rec.entry.frequency = cur.u64();
    rec.entry.last_update_step = cur.u64();
    const std::uint16_t slot_count = cur.u16();
    for (std::uint16_t s = 0; s < slot_count; ++s) {
      const std::uint16_t name_len = cur.u16();
      std::string name = cur.bytes(name_len);
      rec.entry.slots[std::move(name)] = cur.f32s(out.stored_dim);
    }
    rec.entry.vector = cur.f32s(out.stored_dim);
    out.records.push_back(std::move(rec));
  }
  if (cur.remaining() != 0) {
    throw Error(ErrorCode::kFormatError, path + ": trailing bytes after records");
  }
  return out;
}

}  // namespace dynembed
