#include "sctts/numkit/binio.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "sctts/error.hpp"

namespace sctts {

void ByteWriter::magic(std::string_view tag) {
  require(tag.size() == 4, "magic tags are four characters");
  buf_.insert(buf_.end(), tag.begin(), tag.end());
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> values) {
  for (const double v : values) f64(v);
}

void ByteWriter::f64_array(std::span<const double> values) {
  u64(values.size());
  f64s(values);
}

void ByteWriter::u32_array(std::span<const std::uint32_t> values) {
  u64(values.size());
  for (const auto v : values) u32(v);
}

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ByteReader ByteReader::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes));
}

void ByteReader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) throw FormatError("unexpected end of file");
}

void ByteReader::expect_magic(std::string_view tag) {
  need(4);
  const std::string_view got(reinterpret_cast<const char*>(buf_.data() + pos_), 4);
  if (got != tag) {
    throw FormatError("bad magic: expected '" + std::string(tag) + "'");
  }
  pos_ += 4;
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(buf_[pos_++]) << (8 * i);
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::f64s(std::span<double> out) {
  need(out.size() * 8);
  for (double& v : out) v = f64();
}

std::vector<double> ByteReader::f64_array() {
  const std::uint64_t n = u64();
  need(n * 8);
  std::vector<double> out(n);
  f64s(out);
  return out;
}

std::vector<std::uint32_t> ByteReader::u32_array() {
  const std::uint64_t n = u64();
  need(n * 4);
  std::vector<std::uint32_t> out(n);
  for (auto& v : out) v = u32();
  return out;
}

std::string ByteReader::str() {
  const std::uint64_t n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::expect_end() const {
  if (!at_end()) throw FormatError("trailing bytes after payload");
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return content_hash(bytes);
}

}  // namespace sctts
