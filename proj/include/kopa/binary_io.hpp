#pragma once

// Little-endian primitives shared by the embedding, adapter and toy-LM files.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kopa/error.hpp"

namespace kopa::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw DataError("cannot write " + path.string());
  }

  void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f32s(std::span<const float> v) { raw(v.data(), v.size_bytes()); }
  template <typename Real>
  void as_f32(std::span<const Real> v) {
    for (Real x : v) f32(static_cast<float>(x));
  }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void close() {
    out_.close();
    if (!out_) throw DataError("failed writing " + path_.string());
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), std::streamsize(n)); }
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void expect_magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::string_view(bytes_.data() + pos_, m.size()) != m) {
      throw FormatError(path_ + ": bad magic, expected " + std::string(m));
    }
    pos_ += m.size();
  }
  std::uint32_t u32() { return pod<std::uint32_t>("u32 field"); }
  float f32() { return pod<float>("f32 value"); }
  void f32s(std::span<float> out) {
    need(out.size_bytes(), "f32 payload");
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  std::string string() {
    auto n = u32();
    need(n, "string");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(path_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
    }
  }
  const std::string& path() const { return path_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(path_ + ": truncated while reading " + what);
  }

  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace kopa::io
