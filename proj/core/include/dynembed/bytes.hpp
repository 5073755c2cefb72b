// Little-endian byte codec shared by the wire protocol and tools.
//
// All multi-byte integers are little-endian.  Strings are encoded as a u32
// byte length followed by the raw bytes; float vectors as a u32 element
// count followed by the IEEE-754 payloads.  ByteReader throws
// ErrorCode::kProtocolError on any truncation so callers never read past
// the end of a frame.
#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dynembed/error.hpp"

namespace dynembed {

class ByteWriter {
 public:
  ByteWriter() = default;

  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u16(std::uint16_t v) { append(&v, sizeof v); }
  void u32(std::uint32_t v) { append(&v, sizeof v); }
  void u64(std::uint64_t v) { append(&v, sizeof v); }

  void f32(float v) { append(&v, sizeof v); }
  void f64(double v) { append(&v, sizeof v); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  void f32vec(const std::vector<float>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    if (!v.empty()) append(v.data(), v.size() * sizeof(float));
  }

  void raw(const void* data, std::size_t n) { append(data, n); }

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  void append(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }

  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const void* data, std::size_t size)
      : p_(static_cast<const char*>(data)), end_(p_ + size) {}
  explicit ByteReader(const std::string& s) : ByteReader(s.data(), s.size()) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(*p_++);
  }

  std::uint16_t u16() { return fixed<std::uint16_t>(); }
  std::uint32_t u32() { return fixed<std::uint32_t>(); }
  std::uint64_t u64() { return fixed<std::uint64_t>(); }
  float f32() { return fixed<float>(); }
  double f64() { return fixed<double>(); }

  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string out(p_, n);
    p_ += n;
    return out;
  }

  std::vector<float> f32vec() {
    std::uint32_t n = u32();
    need(static_cast<std::size_t>(n) * sizeof(float));
    std::vector<float> out(n);
    if (n != 0) std::memcpy(out.data(), p_, n * sizeof(float));
    p_ += static_cast<std::size_t>(n) * sizeof(float);
    return out;
  }

  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
  bool done() const { return p_ == end_; }

  // Call at the end of a message decode to reject trailing garbage.
  void expect_done() const {
    if (!done()) throw Error(ErrorCode::kProtocolError, "trailing bytes in message");
  }

 private:
  template <typename T>
  T fixed() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }

  void need(std::size_t n) const {
    if (remaining() < n) throw Error(ErrorCode::kProtocolError, "truncated message");
  }

  const char* p_;
  const char* end_;
};

}  // namespace dynembed
