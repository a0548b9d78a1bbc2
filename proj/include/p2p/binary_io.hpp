// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte encoding shared by the sequence and checkpoint formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"

namespace p2p {

using Bytes = std::vector<std::uint8_t>;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

class ByteWriter {
 public:
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const Bytes& bytes() const { return bytes_; }
  Bytes take() { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

  void expect(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(bytes_.data() + offset_, magic.data(), magic.size()) != 0) {
      throw ParseError(what_ + ": bad magic at offset " + std::to_string(offset_));
    }
    offset_ += magic.size();
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 4;
    return v;
  }
  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 8;
    return v;
  }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }

  /// need(count * width) without overflow.
  void need_items(std::uint64_t count, std::size_t width, const char* field) const {
    if (count > remaining() / width) {
      throw ParseError(what_ + ": truncated " + field + " at offset " + std::to_string(offset_) + " (" +
                       std::to_string(count) + " items of " + std::to_string(width) + " bytes, have " +
                       std::to_string(remaining()) + ")");
    }
  }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw ParseError(what_ + ": truncated " + field + " at offset " + std::to_string(offset_) + " (need " +
                       std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t offset_ = 0;
};

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace p2p
