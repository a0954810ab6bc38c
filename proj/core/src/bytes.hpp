#pragma once

// Internal little-endian byte packing helpers shared by the MMF / MMMC /
// MMMT readers and writers. All multi-byte integers are little-endian and
// floats are IEEE-754, independent of host endianness.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmm/common.hpp"

namespace mmm::detail {

class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v) { put_le(v); }
  void put_u32(std::uint32_t v) { put_le(v); }
  void put_u64(std::uint64_t v) { put_le(v); }
  void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void put_f32_array(std::span<const float> vals) {
    for (float v : vals) put_f32(v);
  }
  void put_string(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string file_label)
      : data_(data), label_(std::move(file_label)) {}

  std::uint8_t get_u8() { return get_le<std::uint8_t>(); }
  std::uint16_t get_u16() { return get_le<std::uint16_t>(); }
  std::uint32_t get_u32() { return get_le<std::uint32_t>(); }
  std::uint64_t get_u64() { return get_le<std::uint64_t>(); }
  float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }
  std::string get_string();
  void get_f32_array(std::span<float> out);
  void get_bytes(void* out, std::size_t n);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::span<const std::uint8_t> all() const { return data_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  template <typename T>
  T get_le() {
    require(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }
  void require(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::string label_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(std::span<const std::uint8_t> data);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Checks the 4-byte magic and u16 version, then verifies the trailing
// CRC32 over everything between the version field and the CRC itself.
// Returns a reader positioned at the start of the payload.
ByteReader open_checked(std::span<const std::uint8_t> bytes, std::string_view magic,
                        std::uint16_t expected_version, const std::filesystem::path& path);

// Assembles magic | version | payload | crc32(payload) and writes it.
void write_checked(const std::filesystem::path& path, std::string_view magic,
                   std::uint16_t version, const ByteWriter& payload);

}  // namespace mmm::detail
