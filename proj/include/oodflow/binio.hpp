#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "oodflow/error.hpp"

namespace oodflow {

// Little-endian byte-buffer writer/reader for the FVEC and checkpoint
// containers. Values are serialized bytewise so the formats are identical
// on any host.

class ByteWriter {
 public:
  void u8(uint8_t x) { buf_.push_back(x); }
  void u16(uint16_t x) { le(x); }
  void u32(uint32_t x) { le(x); }
  void u64(uint64_t x) { le(x); }
  void f32(float x) {
    uint32_t b;
    std::memcpy(&b, &x, 4);
    le(b);
  }
  void bytes(const void* p, size_t n) {
    const auto* c = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void f32_array(const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) f32(p[i]);
  }
  void u32_array(const uint32_t* p, size_t n) {
    for (size_t i = 0; i < n; ++i) u32(p[i]);
  }

  const std::vector<uint8_t>& data() const { return buf_; }
  size_t size() const { return buf_.size(); }

 private:
  template <typename T>
  void le(T x) {
    for (size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<uint8_t>(x >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}

  uint8_t u8() { return take<uint8_t>(); }
  uint16_t u16() { return take<uint16_t>(); }
  uint32_t u32() { return take<uint32_t>(); }
  uint64_t u64() { return take<uint64_t>(); }
  float f32() {
    uint32_t b = take<uint32_t>();
    float x;
    std::memcpy(&x, &b, 4);
    return x;
  }
  void f32_array(float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = f32();
  }
  void u32_array(uint32_t* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = u32();
  }
  void bytes(void* out, size_t n) {
    need(n);
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }

  size_t remaining() const { return n_ - pos_; }
  size_t pos() const { return pos_; }

 private:
  template <typename T>
  T take() {
    need(sizeof(T));
    T x = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      x |= static_cast<T>(static_cast<T>(p_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return x;
  }
  void need(size_t n) {
    if (pos_ + n > n_)
      throw_error(ErrorKind::corruption, "file truncated: payload shorter than header declares");
  }

  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

// CRC-32 (reflected, poly 0xEDB88320), the usual zlib polynomial.
inline uint32_t crc32(const uint8_t* p, size_t n, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

// Whole-file helpers with atomic replace on write (temp file + rename), so
// interrupted runs never leave truncated artifacts behind.
std::vector<uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const void* data, size_t n);
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace oodflow
