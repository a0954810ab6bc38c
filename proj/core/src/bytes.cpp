#include "bytes.hpp"

#include <zlib.h>

#include <fstream>

namespace mmm::detail {

void ByteWriter::put_string(std::string_view s) {
  if (s.size() > 0xffff) throw ArgumentError("string field exceeds 65535 bytes");
  put_u16(static_cast<std::uint16_t>(s.size()));
  put_bytes(s.data(), s.size());
}

std::string ByteReader::get_string() {
  const std::uint16_t n = get_u16();
  require(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::get_f32_array(std::span<float> out) {
  for (float& v : out) v = get_f32();
}

void ByteReader::get_bytes(void* out, std::size_t n) {
  require(n);
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

void ByteReader::fail(const std::string& what) const {
  throw FormatError(label_ + ": " + what + " at byte offset " + std::to_string(pos_));
}

void ByteReader::require(std::size_t n) const {
  if (pos_ + n > data_.size()) {
    throw FormatError(label_ + ": truncated payload, need " + std::to_string(n) +
                      " bytes at byte offset " + std::to_string(pos_) + " but file has " +
                      std::to_string(data_.size()));
  }
}

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  c = ::crc32(c, data.data(), static_cast<uInt>(data.size()));
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + path.string());
  return bytes;
}

ByteReader open_checked(std::span<const std::uint8_t> bytes, std::string_view magic,
                        std::uint16_t expected_version, const std::filesystem::path& path) {
  const std::string label = path.filename().string();
  if (bytes.size() < magic.size() + 2 + 4) {
    throw FormatError(label + ": file too short (" + std::to_string(bytes.size()) +
                      " bytes) at byte offset 0");
  }
  if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0) {
    throw FormatError(label + ": bad magic, expected \"" + std::string(magic) +
                      "\" at byte offset 0");
  }
  const std::size_t header = magic.size() + 2;
  const std::uint16_t version = static_cast<std::uint16_t>(
      bytes[magic.size()] | (static_cast<std::uint16_t>(bytes[magic.size() + 1]) << 8));
  if (version != expected_version) {
    throw FormatError(label + ": unsupported version " + std::to_string(version) +
                      ", expected " + std::to_string(expected_version) + " at byte offset " +
                      std::to_string(magic.size()));
  }
  const std::span<const std::uint8_t> payload = bytes.subspan(header, bytes.size() - header - 4);
  const std::size_t crc_off = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[crc_off + i]) << (8 * i);
  if (stored != crc32(payload)) {
    throw FormatError(label + ": CRC32 mismatch at byte offset " + std::to_string(crc_off));
  }
  return ByteReader(payload, label);
}

void write_checked(const std::filesystem::path& path, std::string_view magic,
                   std::uint16_t version, const ByteWriter& payload) {
  ByteWriter out;
  out.put_bytes(magic.data(), magic.size());
  out.put_u16(version);
  out.put_bytes(payload.bytes().data(), payload.size());
  const std::uint32_t crc = crc32(payload.bytes());
  out.put_u32(crc);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(out.bytes().data()),
          static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace mmm::detail
