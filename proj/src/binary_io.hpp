#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clothfit/error.hpp"

namespace clothfit::detail {

// Little-endian scalar streams for the binary containers.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  void magic(const char (&tag)[5]) { out_.write(tag, 4); }
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void f32(double v) {
    const float f = static_cast<float>(v);
    put(std::bit_cast<std::uint32_t>(f));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    put(static_cast<std::uint32_t>(bits));
    put(static_cast<std::uint32_t>(bits >> 32));
  }
  template <class It>
  void f64_range(It first, It last) {
    for (; first != last; ++first) f64(*first);
  }
  template <class It>
  void f32_range(It first, It last) {
    for (; first != last; ++first) f32(*first);
  }
  void f32_block(const float* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    } else {
      for (std::size_t i = 0; i < count; ++i) put(std::bit_cast<std::uint32_t>(data[i]));
    }
  }
  void finish() {
    out_.flush();
    if (!out_) throw Error("failed writing " + path_.string());
  }

 private:
  void put(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open " + path.string());
  }
  void expect_magic(const char (&tag)[5]) {
    char got[4] = {};
    in_.read(got, 4);
    if (!in_ || std::memcmp(got, tag, 4) != 0) {
      throw ParseError(path_.string(), 0, std::string("missing '") + tag + "' header");
    }
  }
  std::uint32_t u32() { return get(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get()); }
  double f32() { return static_cast<double>(std::bit_cast<float>(get())); }
  double f64() {
    const std::uint64_t lo = get(), hi = get();
    return std::bit_cast<double>(lo | (hi << 32));
  }
  void f32_block(float* data, std::size_t count) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in_) throw ParseError(path_.string(), 0, "unexpected end of file");
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(data[i])));
      }
    }
  }
  // Guards allocations driven by header counts.
  void check_remaining(std::uint64_t bytes) {
    const auto pos = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(pos);
    if (pos < 0 || end < 0 || static_cast<std::uint64_t>(end - pos) < bytes) {
      throw ParseError(path_.string(), 0, "file is shorter than its header claims");
    }
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::uint32_t get() {
    unsigned char b[4];
    in_.read(reinterpret_cast<char*>(b), 4);
    if (!in_) throw ParseError(path_.string(), 0, "unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace clothfit::detail
