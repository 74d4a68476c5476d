#pragma once

// Little-endian primitives shared by the checkpoint and soft-label formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdkd/errors.hpp"

namespace sdkd::detail {

class LeWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class LeReader {
 public:
  LeReader(std::vector<char> buf, std::string what) : buf_(std::move(buf)), what_(std::move(what)) {}

  static LeReader from_file(const std::filesystem::path& path, std::string what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return LeReader(std::move(buf), std::move(what));
  }

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
      throw FormatError("corrupt " + what_ + ": bad magic (expected " + std::string(magic) + ")");
    pos_ += magic.size();
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& v : out) v = f64();
  }
  void expect_end() const {
    if (pos_ != buf_.size()) throw FormatError("corrupt " + what_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("corrupt " + what_ + ": truncated");
  }

  std::vector<char> buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace sdkd::detail
