#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "featsplat/error.hpp"

namespace featsplat {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Bounds-checked little-endian cursor over a byte buffer.
class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T> T read() {
    static_assert(std::is_trivially_copyable_v<T>);
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> read_bytes(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  /// Reads a NUL-terminated string.
  std::string read_cstring();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorKind::TruncatedFile, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class ByteWriter {
public:
  template <typename T> void write(const T &value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void write_bytes(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void write_string(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t> &bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
  std::vector<std::uint8_t> buf_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path &path);
std::string read_text_file(const std::filesystem::path &path);
/// Writes to a sibling temp file then renames, so readers never see partial files.
void write_file_atomic(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
void write_text_file_atomic(const std::filesystem::path &path, std::string_view text);

} // namespace featsplat
