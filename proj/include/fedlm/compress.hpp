#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlm/io.hpp"
#include "fedlm/params.hpp"
#include "fedlm/tensor.hpp"

namespace fedlm {

enum class Scheme : std::uint8_t { none = 0, uniform = 1, terngrad = 2 };

std::string_view scheme_name(Scheme s);
Scheme parse_scheme(std::string_view s);

enum class Direction { download, upload };

inline constexpr double kUncompressedBits = 32.0;
inline const double kTernaryBits = std::log2(3.0);

struct QuantConfig {
  Scheme scheme = Scheme::none;
  // uniform: log2 of the level count (integer); terngrad: log2(3);
  // none: 32, the accounting width of an uncompressed parameter.
  double bits = kUncompressedBits;
  bool zero_center = false;
  bool linf_clip = false;
  double clip_std = 2.5;  // clamp to mean +- clip_std * std when linf_clip

  // Bits charged per transmitted parameter.
  double bits_per_value() const;
  std::uint32_t levels() const;  // uniform only
  bool operator==(const QuantConfig&) const = default;
};

// Throws ConfigError naming `key_prefix` + "_bits" etc. Uniform bits must be
// an integer in [8,28] for download and [1,28] for upload.
void validate_quant(const QuantConfig& cfg, Direction dir,
                    std::string_view key_prefix);

QuantConfig uniform_config(int bits, bool zero_center = false,
                           bool linf_clip = false);
QuantConfig terngrad_config(bool linf_clip = false);

/// One compressed tensor.
struct TensorRecord {
  std::string name;
  std::uint64_t count = 0;
  Scheme scheme = Scheme::none;
  std::uint8_t index_bits = 0;  // uniform: log2(levels); terngrad: 2
  bool zero_centered = false;
  float lo = 0.0f;     // uniform range
  float hi = 0.0f;
  float scale = 0.0f;  // terngrad magnitude s
  float mean = 0.0f;   // subtracted before quantizing when zero_centered
  // uniform: level index; terngrad: 0 -> 0, 1 -> +s, 2 -> -s.
  std::vector<std::uint32_t> indices;
  std::vector<double> raw;  // scheme none

  double ideal_bits() const;
  bool operator==(const TensorRecord&) const = default;
};

struct Payload {
  std::vector<TensorRecord> records;

  // Sum of count * bits over records; excludes headers and side values.
  double ideal_bits() const;
  bool operator==(const Payload&) const = default;
};

TensorRecord quantize_uniform(std::string name, std::span<const double> values,
                              const QuantConfig& cfg, Prng& rng);
TensorRecord ternarize(std::string name, std::span<const double> values,
                       const QuantConfig& cfg, Prng& rng);
TensorRecord raw_record(std::string name, std::span<const double> values);
TensorRecord compress_tensor(std::string name, std::span<const double> values,
                             const QuantConfig& cfg, Prng& rng);

// Values of one record; DecodeError on an out-of-range index.
std::vector<double> dequantize(const TensorRecord& r);

// Compresses every tensor with its own stream rng.derive(name).
Payload compress_map(const TensorMap& tensors, const QuantConfig& cfg,
                     const Prng& rng);
// Rebuilds tensors using the shapes in `like`; names must match.
TensorMap decompress_map(const Payload& p, const TensorMap& like);

// Wire format: "FQP1", u32 record count, then per record u16 name length,
// name, u8 scheme byte (bits 0-1 scheme, bit 2 zero-centered, bits 3-7 index
// width), u64 count, then
//   none:     count little-endian f64 values
//   uniform:  f32 lo, f32 hi, [f32 mean], ceil(count*width/8) packed bytes
//   terngrad: f32 s, ceil(count*2/8) packed bytes
// Indices are packed LSB-first.
io::Bytes encode_payload(const Payload& p);
Payload decode_payload(std::span<const std::uint8_t> bytes);

// LSB-first bit packing helpers.
std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> idx,
                                       unsigned width);
std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes,
                                          std::size_t count, unsigned width);

inline constexpr double kBytesPerGB = 1e9;

// params * bits / 8 * rounds, no overhead.
double cost_bytes(double param_count, double bits, double rounds);

}  // namespace fedlm
