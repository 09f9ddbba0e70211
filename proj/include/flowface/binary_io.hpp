#pragma once

// Little-endian binary stream helpers shared by the FL3D, SFLW and checkpoint
// containers.

#include "flowface/common.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace flowface::io {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw RuntimeAbort("cannot open for writing: " + path.string());
  }

  void magic(std::string_view four) { out_.write(four.data(), 4); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <class T>
  void array(std::span<const T> values) {
    raw(values.data(), values.size_bytes());
  }
  void finish() {
    out_.flush();
    if (!out_) throw RuntimeAbort("write failed: " + path_.string());
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ValidationError("cannot open: " + path.string());
  }

  void expect_magic(std::string_view four) {
    char buf[4] = {};
    in_.read(buf, 4);
    check();
    if (std::string_view(buf, 4) != four)
      throw ValidationError("bad magic in " + path_.string() + ", expected " + std::string(four));
  }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  float f32() { return pod<float>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u32();
    if (n > (1u << 28)) throw ValidationError("corrupt string length in " + path_.string());
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }
  template <class T>
  void array(std::span<T> out) {
    in_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
    check();
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  template <class T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  void check() {
    if (!in_) throw ValidationError("truncated file: " + path_.string());
  }

  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace flowface::io
