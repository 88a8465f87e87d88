#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "rmc/errors.hpp"

namespace rmc::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void f32(float v) { raw(&v, 4); }
  void bytes(const void* p, size_t n) { raw(p, n); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size() * 4); }
  const std::vector<uint8_t>& buffer() const { return buf_; }

  /// Writes to a temporary sibling and renames it into place.
  void commit(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw FormatError(FormatError::Kind::Io, "cannot open " + tmp + " for writing");
      out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw FormatError(FormatError::Kind::Io, "write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw FormatError(FormatError::Kind::Io, "cannot rename " + tmp + " to " + path);
  }

 private:
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "cannot open " + path);
    std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path);
  }

  ByteReader(std::vector<uint8_t> data, std::string label) : data_(std::move(data)), label_(std::move(label)) {}

  uint8_t u8() { return take<uint8_t>(); }
  uint16_t u16() { return take<uint16_t>(); }
  uint32_t u32() { return take<uint32_t>(); }
  void bytes(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  void f32s(std::span<float> dst) { bytes(dst.data(), dst.size() * 4); }
  size_t remaining() const { return data_.size() - pos_; }
  const std::string& label() const { return label_; }

 private:
  template <typename V>
  V take() {
    V v;
    bytes(&v, sizeof(V));
    return v;
  }
  void need(size_t n) const {
    if (pos_ + n > data_.size())
      throw FormatError(FormatError::Kind::Truncated, label_ + ": truncated at byte " + std::to_string(pos_) +
                                                          " (need " + std::to_string(n) + " more)");
  }

  std::vector<uint8_t> data_;
  std::string label_;
  size_t pos_ = 0;
};

}  // namespace rmc::detail
