#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "npc/data.hpp"

namespace npc::detail {

#if !defined(__BYTE_ORDER__) || __BYTE_ORDER__ != __ORDER_LITTLE_ENDIAN__
#error "container I/O assumes a little-endian host"
#endif

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint64_t offset() const { return offset_; }

  std::uint8_t u8() {
    need(1, "u8");
    return bytes_[offset_++];
  }

  std::uint32_t u32le() {
    need(4, "u32");
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + offset_, 4);
    offset_ += 4;
    return v;
  }

  std::uint64_t u64le() {
    need(8, "u64");
    std::uint64_t v;
    std::memcpy(&v, bytes_.data() + offset_, 8);
    offset_ += 8;
    return v;
  }

  float f32le() {
    need(4, "f32");
    float v;
    std::memcpy(&v, bytes_.data() + offset_, 4);
    offset_ += 4;
    return v;
  }

  double f64le() {
    need(8, "f64");
    double v;
    std::memcpy(&v, bytes_.data() + offset_, 8);
    offset_ += 8;
    return v;
  }

  std::uint32_t u32be() { return __builtin_bswap32(u32le()); }

  void finish() const {
    if (offset_ != bytes_.size())
      throw FormatError(path_ + ": trailing bytes after payload", offset_);
  }

  [[noreturn]] void fail(const std::string& what, std::uint64_t at) const {
    throw FormatError(path_ + ": " + what, at);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (offset_ + n > bytes_.size())
      throw FormatError(path_ + ": truncated while reading " + what, offset_);
  }

  std::vector<std::uint8_t> bytes_;
  std::string path_;
  std::uint64_t offset_ = 0;
};

inline ByteReader open_reader(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("read failed: " + path);
  return ByteReader(std::move(bytes), path);
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }

  void u32le(std::uint32_t v) { append(&v, 4); }
  void u64le(std::uint64_t v) { append(&v, 8); }
  void f32le(float v) { append(&v, 4); }
  void f64le(double v) { append(&v, 8); }

  void write_to(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes_.data()),
              static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
  }

 private:
  void append(const void* src, std::size_t n) {
    const std::uint8_t* b = static_cast<const std::uint8_t*>(src);
    bytes_.insert(bytes_.end(), b, b + n);
  }

  std::vector<std::uint8_t> bytes_;
};

}  // namespace npc::detail
