#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedlm::io {

using Bytes = std::vector<std::uint8_t>;

// Little-endian writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::string_view s);
  void raw(std::span<const std::uint8_t> s);

  const Bytes& bytes() const& { return buf_; }
  Bytes bytes() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

// Little-endian reader; truncation raises DecodeError with the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str(std::size_t n);
  std::span<const std::uint8_t> take(std::size_t n);

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n, const char* what);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> data);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

// Hex SHA-1 of "blob <len>\0<content>", as git hashes file contents.
std::string git_blob_hash(std::string_view content);

}  // namespace fedlm::io
