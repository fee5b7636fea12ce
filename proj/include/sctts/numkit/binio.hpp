#pragma once

// Little-endian byte buffers used by every versioned binary format
// (corpus, knowledge base, synthesizer, checkpoint). Each file starts with a
// four-character magic and a u16 version.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sctts {

class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  // Length-prefixed (u64) array.
  void f64_array(std::span<const double> values);
  void u32_array(std::span<const std::uint32_t> values);
  void str(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}
  static ByteReader load(const std::filesystem::path& path);

  // Throws FormatError unless the next four bytes equal `tag`.
  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  std::vector<double> f64_array();
  std::vector<std::uint32_t> u32_array();
  std::string str();

  bool at_end() const noexcept { return pos_ == buf_.size(); }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

// FNV-1a 64 over a byte range, printed as hex; used for checkpoint identity.
std::string content_hash(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace sctts
