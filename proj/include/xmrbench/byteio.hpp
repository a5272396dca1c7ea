#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmrbench/error.hpp"

namespace xmr::byteio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u16(std::uint16_t v) { bytes(&v, sizeof v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void text(std::string_view s) { bytes(s.data(), s.size()); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

/// Bounds-checked reader; every overrun throws Error(kTruncated).
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  void require(std::size_t n, std::string_view what) const {
    if (n > remaining()) {
      throw Error(ErrorCode::kTruncated, "truncated input while reading " + std::string(what));
    }
  }
  void bytes(void* dst, std::size_t n, std::string_view what) {
    require(n, what);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16(std::string_view what) { std::uint16_t v; bytes(&v, sizeof v, what); return v; }
  std::uint32_t u32(std::string_view what) { std::uint32_t v; bytes(&v, sizeof v, what); return v; }
  float f32(std::string_view what) { float v; bytes(&v, sizeof v, what); return v; }
  std::string text(std::size_t n, std::string_view what) {
    require(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace xmr::byteio
