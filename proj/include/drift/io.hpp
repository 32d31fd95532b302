#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drift/errors.hpp"

namespace drift::io {

// Little-endian byte buffer writer/reader for the binary dataset and
// checkpoint containers.
class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void text(std::string_view s) { bytes(s.data(), s.size()); }

  template <typename U>
  void scalar(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes(raw, sizeof(U));
  }

  template <typename U>
  void array(std::span<const U> values) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(values.data(), values.size_bytes());
    } else {
      for (U v : values) scalar(v);
    }
  }

  std::vector<std::uint8_t>& buffer() noexcept { return buf_; }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  template <typename U>
  U scalar() {
    std::uint8_t raw[sizeof(U)];
    bytes(raw, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }

  template <typename U>
  void array(std::span<U> out) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(out.data(), out.size_bytes());
    } else {
      for (auto& v : out) v = scalar<U>();
    }
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  const std::string& origin() const noexcept { return origin_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      fail(ErrorKind::Format, origin_ + ": truncated (needed " + std::to_string(n) +
                                  " more bytes at offset " + std::to_string(pos_) + ")");
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path, std::string_view what);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
// Shortest decimal text that parses back to the same value.
std::string format_double(double v);
std::string format_float(float v);
std::string sha256_hex(std::string_view text);

}  // namespace drift::io
