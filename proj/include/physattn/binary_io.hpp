#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "physattn/error.hpp"

// Little-endian primitives shared by the checkpoint and dataset formats.
namespace physattn::binary {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <typename T>
  void put(T v) {
    v = to_little(v);
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(v); }
  void bytes(std::string_view s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void f64s(std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
      os_.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (double v : values) f64(v);
    }
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw DataError(what_ + ": unexpected end of file");
    return to_little(v);
  }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw DataError(what_ + ": unexpected end of file");
    return s;
  }
  void f64s(std::span<double> out) {
    if constexpr (std::endian::native == std::endian::little) {
      is_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
      if (!is_) throw DataError(what_ + ": unexpected end of file");
    } else {
      for (double& v : out) v = f64();
    }
  }
  void expect_magic(std::string_view magic) {
    if (bytes(magic.size()) != magic) throw DataError(what_ + ": bad magic, expected '" + std::string(magic) + "'");
  }
  /// Fails unless the stream is exhausted.
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) throw DataError(what_ + ": trailing bytes");
  }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace physattn::binary
