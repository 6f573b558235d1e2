#pragma once

// Little-endian primitives shared by the MTGF / MTGM / MTGP containers.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "mtg/error.hpp"

namespace mtg::detail {

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out_) fail(ErrorCode::io, "write failed after " + std::to_string(written_) + " bytes");
    written_ += size;
  }
  void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }
  void u32(std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    bytes(b.data(), b.size());
  }
  void u64(std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    bytes(b.data(), b.size());
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32_array(const float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) f32(data[i]);
    }
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  std::size_t written() const noexcept { return written_; }

 private:
  std::ostream& out_;
  std::size_t written_ = 0;
};

class LeReader {
 public:
  LeReader(std::istream& in, std::string_view what) : in_(in), what_(what) {}

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size) {
      fail(ErrorCode::truncated, std::string(what_) + ": truncated payload at byte " + std::to_string(offset_));
    }
    offset_ += size;
  }
  void expect_magic(std::string_view tag) {
    std::array<char, 4> got{};
    in_.read(got.data(), 4);
    if (in_.gcount() != 4 || std::string_view(got.data(), 4) != tag) {
      fail(ErrorCode::bad_magic, std::string(what_) + ": expected magic \"" + std::string(tag) + "\"");
    }
    offset_ += 4;
  }
  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    bytes(b.data(), b.size());
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::array<unsigned char, 8> b{};
    bytes(b.data(), b.size());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void f32_array(float* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(data, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) data[i] = f32();
    }
  }
  std::string str(std::size_t max_len = 1u << 20) {
    const auto n = u32();
    if (n > max_len) fail(ErrorCode::invariant, std::string(what_) + ": string length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  /// True when the stream has no more bytes.
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string_view what_;
  std::size_t offset_ = 0;
};

}  // namespace mtg::detail
