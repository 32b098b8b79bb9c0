#include "fedlm/io.hpp"

#include <openssl/sha.h>

#include <bit>
#include <charconv>
#include <fstream>
#include <iterator>

#include "fedlm/tensor.hpp"

namespace fedlm::io {

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
void ByteWriter::raw(std::span<const std::uint8_t> s) {
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::fail(const std::string& what) const {
  throw DecodeError(what + " at offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n, const char* what) {
  if (remaining() < n) {
    fail(std::string("truncated input reading ") + what);
  }
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}
std::uint16_t ByteReader::u16() {
  need(2, "u16");
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(data_[pos_++]) << (8 * i);
  return v;
}
std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}
std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str(std::size_t n) {
  auto s = take(n);
  return std::string(s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  need(n, "bytes");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string git_blob_hash(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

}  // namespace fedlm::io
