#pragma once

// Little-endian byte (de)serialization shared by the WAV, SQPD and SQPW codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "sqp/error.hpp"

namespace sqp::detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

  template <typename T>
  T read() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::uint16_t read_u16() { return read<std::uint16_t>(); }
  std::int16_t read_i16() { return read<std::int16_t>(); }
  std::uint32_t read_u32() { return read<std::uint32_t>(); }
  std::int32_t read_i32() { return read<std::int32_t>(); }
  std::uint64_t read_u64() { return read<std::uint64_t>(); }
  float read_f32() { return read<float>(); }
  std::uint8_t read_u8() { return read<std::uint8_t>(); }

  std::string read_tag() { return read_string(4); }

  std::string read_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  template <typename T>
  void read_array(std::span<T> out) {
    const std::size_t n = out.size_bytes();
    need(n);
    if (n) std::memcpy(out.data(), bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      throw FormatError(what_ + ": truncated input (needed " + std::to_string(n) +
                        " bytes at offset " + std::to_string(pos_) + ", " +
                        std::to_string(remaining()) + " left)");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  template <typename T>
  void write(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void write_u8(std::uint8_t v) { write(v); }
  void write_u16(std::uint16_t v) { write(v); }
  void write_i16(std::int16_t v) { write(v); }
  void write_u32(std::uint32_t v) { write(v); }
  void write_i32(std::int32_t v) { write(v); }
  void write_u64(std::uint64_t v) { write(v); }
  void write_f32(float v) { write(v); }

  void write_tag(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }
  void write_string(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  template <typename T>
  void write_array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  std::vector<std::uint8_t> take() && { return std::move(bytes_); }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace sqp::detail
