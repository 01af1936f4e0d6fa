#pragma once

// Little-endian primitive encoding shared by the dataset, theta-stats and
// model containers. Writers and readers keep a running CRC32 of every byte
// that passes through them.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "impreg/error.hpp"
#include "impreg/types.hpp"

namespace impreg::io {

class Crc32 {
 public:
  void update(const void* data, std::size_t size) {
    value_ = ::crc32(value_, static_cast<const Bytef*>(data), static_cast<uInt>(size));
  }
  std::uint32_t value() const noexcept { return static_cast<std::uint32_t>(value_); }

 private:
  uLong value_ = ::crc32(0L, Z_NULL, 0);
};

namespace detail {
template <class T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }
}
}  // namespace detail

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t size) {
    crc_.update(data, size);
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out_) throw Error(ErrorCode::Io, "write failed");
  }

  template <class T>
  void scalar(T value) {
    value = detail::to_little(value);
    bytes(&value, sizeof(T));
  }

  void u8(std::uint8_t v) { scalar(v); }
  void u16(std::uint16_t v) { scalar(v); }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f64(double v) { scalar(v); }

  void f64s(const double* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(data, count * sizeof(double));
    } else {
      for (std::size_t i = 0; i < count; ++i) f64(data[i]);
    }
  }
  void f64s(const Vector& v) { f64s(v.data(), static_cast<std::size_t>(v.size())); }

  void text(std::string_view s) { bytes(s.data(), s.size()); }

  /// Appends the CRC of everything written so far; the CRC itself is not hashed.
  void finish_with_crc() {
    const std::uint32_t crc = detail::to_little(crc_.value());
    out_.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    out_.flush();
    if (!out_) throw Error(ErrorCode::Io, "write failed");
  }

 private:
  std::ostream& out_;
  Crc32 crc_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t size) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size)
      throw Error(ErrorCode::ChecksumMismatch, "unexpected end of file");
    crc_.update(data, size);
  }

  template <class T>
  T scalar() {
    T value;
    bytes(&value, sizeof(T));
    return detail::to_little(value);
  }

  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  double f64() { return scalar<double>(); }

  void f64s(double* data, std::size_t count) {
    bytes(data, count * sizeof(double));
    if constexpr (std::endian::native != std::endian::little) {
      for (std::size_t i = 0; i < count; ++i) data[i] = detail::to_little(data[i]);
    }
  }
  Vector f64_vector(std::size_t count) {
    Vector v(static_cast<Eigen::Index>(count));
    f64s(v.data(), count);
    return v;
  }

  std::string text(std::size_t size) {
    std::string s(size, '\0');
    bytes(s.data(), size);
    return s;
  }

  /// Reads the trailing CRC and compares it with the running value; also
  /// rejects trailing garbage.
  void verify_crc() {
    const std::uint32_t expected = crc_.value();
    std::uint32_t stored = 0;
    in_.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (in_.gcount() != sizeof(stored)) throw Error(ErrorCode::ChecksumMismatch, "missing checksum");
    if (detail::to_little(stored) != expected) throw Error(ErrorCode::ChecksumMismatch, "CRC32 differs");
    if (in_.peek() != std::char_traits<char>::eof())
      throw Error(ErrorCode::ChecksumMismatch, "trailing bytes after checksum");
  }

 private:
  std::istream& in_;
  Crc32 crc_;
};

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "' for reading");
  return in;
}

/// Checks a 4-byte magic tag; a different tag means a different file kind.
inline void expect_magic(Reader& reader, std::string_view magic, const std::string& path) {
  std::string got;
  try {
    got = reader.text(magic.size());
  } catch (const Error&) {
    throw Error(ErrorCode::FormatVersionMismatch, "'" + path + "' is too short to hold a header");
  }
  if (got != magic)
    throw Error(ErrorCode::FormatVersionMismatch,
                "'" + path + "' is not a " + std::string(magic) + " file");
}

}  // namespace impreg::io
