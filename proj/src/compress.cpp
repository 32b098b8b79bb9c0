#include "fedlm/compress.hpp"

#include <algorithm>
#include <cmath>

namespace fedlm {

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::none: return "none";
    case Scheme::uniform: return "uniform";
    case Scheme::terngrad: return "terngrad";
  }
  return "?";
}

Scheme parse_scheme(std::string_view s) {
  if (s == "none") return Scheme::none;
  if (s == "uniform") return Scheme::uniform;
  if (s == "terngrad") return Scheme::terngrad;
  throw ConfigError("unknown quantization scheme " + std::string(s));
}

double QuantConfig::bits_per_value() const {
  switch (scheme) {
    case Scheme::none: return kUncompressedBits;
    case Scheme::uniform: return bits;
    case Scheme::terngrad: return kTernaryBits;
  }
  return bits;
}

std::uint32_t QuantConfig::levels() const {
  if (scheme != Scheme::uniform) throw UsageError("levels() of a non-uniform scheme");
  const double k = std::round(std::exp2(bits));
  if (!(k >= 2.0) || k > 4294967295.0) throw ConfigError("uniform quantization needs k >= 2 levels");
  return static_cast<std::uint32_t>(k);
}

void validate_quant(const QuantConfig& cfg, Direction dir,
                    std::string_view key_prefix) {
  const std::string key = std::string(key_prefix);
  switch (cfg.scheme) {
    case Scheme::none:
      if (cfg.bits != kUncompressedBits) {
        throw ConfigError(key + "_bits: scheme none transmits 32 bits per parameter");
      }
      if (cfg.zero_center || cfg.linf_clip) {
        throw ConfigError(key + "_scheme: none takes no zero_center/linf_clip");
      }
      break;
    case Scheme::uniform: {
      const double lo = dir == Direction::download ? 8.0 : 1.0;
      if (!(cfg.bits >= lo && cfg.bits <= 28.0) || cfg.bits != std::floor(cfg.bits)) {
        throw ConfigError(key + "_bits: uniform " +
                          (dir == Direction::download ? "download" : "upload") +
                          " bits must be an integer in [" +
                          std::to_string(static_cast<int>(lo)) + ", 28]");
      }
      break;
    }
    case Scheme::terngrad:
      if (dir == Direction::download) {
        throw ConfigError(key + "_scheme: terngrad is an upload technique");
      }
      if (std::abs(cfg.bits - kTernaryBits) > 1e-3) {
        throw ConfigError(key + "_bits: terngrad uses log2(3) ~ 1.585 bits");
      }
      if (cfg.zero_center) {
        throw ConfigError(key + "_zero_center: not defined for terngrad");
      }
      break;
  }
  if (cfg.linf_clip && !(cfg.clip_std > 0.0)) {
    throw ConfigError(key + "_clip_std: must be > 0");
  }
}

QuantConfig uniform_config(int bits, bool zero_center, bool linf_clip) {
  QuantConfig c;
  c.scheme = Scheme::uniform;
  c.bits = bits;
  c.zero_center = zero_center;
  c.linf_clip = linf_clip;
  return c;
}

QuantConfig terngrad_config(bool linf_clip) {
  QuantConfig c;
  c.scheme = Scheme::terngrad;
  c.bits = kTernaryBits;
  c.linf_clip = linf_clip;
  return c;
}

double TensorRecord::ideal_bits() const {
  const double n = static_cast<double>(count);
  switch (scheme) {
    case Scheme::none: return n * kUncompressedBits;
    case Scheme::uniform: return n * index_bits;
    case Scheme::terngrad: return n * kTernaryBits;
  }
  return 0.0;
}

double Payload::ideal_bits() const {
  double b = 0.0;
  for (const auto& r : records) b += r.ideal_bits();
  return b;
}

namespace {

float round_down(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -INFINITY);
  return f;
}

float round_up(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) < v) f = std::nextafter(f, INFINITY);
  return f;
}

void clamp_to_spread(std::vector<double>& x, double c) {
  if (x.empty()) return;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  for (double& v : x) v = std::clamp(v, mean - c * sd, mean + c * sd);
}

double uniform_level(const TensorRecord& r, std::uint32_t idx,
                     std::uint32_t levels) {
  const double lo = r.lo;
  const double hi = r.hi;
  if (levels < 2 || hi == lo) return lo;
  return lo + (hi - lo) * (static_cast<double>(idx) / static_cast<double>(levels - 1));
}

}  // namespace

TensorRecord quantize_uniform(std::string name, std::span<const double> values,
                              const QuantConfig& cfg, Prng& rng) {
  if (cfg.scheme != Scheme::uniform) throw UsageError("quantize_uniform needs scheme uniform");
  const std::uint32_t k = cfg.levels();
  TensorRecord r;
  r.name = std::move(name);
  r.count = values.size();
  r.scheme = Scheme::uniform;
  r.index_bits = static_cast<std::uint8_t>(std::lround(std::log2(static_cast<double>(k))));
  if ((std::uint64_t{1} << r.index_bits) != k) {
    throw ConfigError("uniform levels must be a power of two");
  }
  std::vector<double> x(values.begin(), values.end());
  if (cfg.zero_center && !x.empty()) {
    double mean = 0.0;
    for (double v : x) mean += v;
    r.zero_centered = true;
    r.mean = static_cast<float>(mean / static_cast<double>(x.size()));
    for (double& v : x) v -= static_cast<double>(r.mean);
  }
  if (cfg.linf_clip) clamp_to_spread(x, cfg.clip_std);
  r.indices.assign(x.size(), 0);
  if (x.empty()) return r;
  auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  r.lo = round_down(*mn);
  r.hi = round_up(*mx);
  if (r.lo == r.hi) return r;
  const double span = static_cast<double>(r.hi) - static_cast<double>(r.lo);
  const double top = static_cast<double>(k - 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pos = (x[i] - static_cast<double>(r.lo)) / span * top;
    std::uint32_t j = static_cast<std::uint32_t>(std::clamp(std::floor(pos), 0.0, top - 1.0));
    // Settle the bracket on the exact level values the decoder will produce.
    while (j + 1 < k - 1 && uniform_level(r, j + 1, k) <= x[i]) ++j;
    while (j > 0 && uniform_level(r, j, k) > x[i]) --j;
    const double below = uniform_level(r, j, k);
    const double above = uniform_level(r, j + 1, k);
    const double p = above > below ? std::clamp((x[i] - below) / (above - below), 0.0, 1.0) : 0.0;
    r.indices[i] = j + (rng.uniform() < p ? 1u : 0u);
  }
  return r;
}

TensorRecord ternarize(std::string name, std::span<const double> values,
                       const QuantConfig& cfg, Prng& rng) {
  if (cfg.scheme != Scheme::terngrad) throw UsageError("ternarize needs scheme terngrad");
  TensorRecord r;
  r.name = std::move(name);
  r.count = values.size();
  r.scheme = Scheme::terngrad;
  r.index_bits = 2;
  std::vector<double> x(values.begin(), values.end());
  if (cfg.linf_clip) clamp_to_spread(x, cfg.clip_std);
  double s = 0.0;
  for (double v : x) s = std::max(s, std::abs(v));
  r.indices.assign(x.size(), 0);
  if (s == 0.0) return r;
  r.scale = round_up(s);
  const double sf = r.scale;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = std::abs(x[i]) / sf;
    if (rng.uniform() < p) r.indices[i] = x[i] > 0.0 ? 1u : 2u;
  }
  return r;
}

TensorRecord raw_record(std::string name, std::span<const double> values) {
  TensorRecord r;
  r.name = std::move(name);
  r.count = values.size();
  r.scheme = Scheme::none;
  r.raw.assign(values.begin(), values.end());
  return r;
}

TensorRecord compress_tensor(std::string name, std::span<const double> values,
                             const QuantConfig& cfg, Prng& rng) {
  switch (cfg.scheme) {
    case Scheme::none: return raw_record(std::move(name), values);
    case Scheme::uniform: return quantize_uniform(std::move(name), values, cfg, rng);
    case Scheme::terngrad: return ternarize(std::move(name), values, cfg, rng);
  }
  throw UsageError("unknown scheme");
}

std::vector<double> dequantize(const TensorRecord& r) {
  std::vector<double> out(r.count, 0.0);
  switch (r.scheme) {
    case Scheme::none:
      if (r.raw.size() != r.count) throw DecodeError("raw record " + r.name + " has wrong length");
      return r.raw;
    case Scheme::uniform: {
      if (r.index_bits < 1 || r.index_bits > 28) {
        throw DecodeError("record " + r.name + " has invalid index width");
      }
      if (r.indices.size() != r.count) throw DecodeError("record " + r.name + " has wrong length");
      const std::uint32_t k = 1u << r.index_bits;
      const double shift = r.zero_centered ? static_cast<double>(r.mean) : 0.0;
      for (std::size_t i = 0; i < r.count; ++i) {
        if (r.indices[i] >= k) {
          throw DecodeError("record " + r.name + ": index " +
                            std::to_string(r.indices[i]) + " >= " + std::to_string(k) +
                            " levels at element " + std::to_string(i));
        }
        out[i] = uniform_level(r, r.indices[i], k) + shift;
      }
      return out;
    }
    case Scheme::terngrad: {
      if (r.indices.size() != r.count) throw DecodeError("record " + r.name + " has wrong length");
      const double s = r.scale;
      for (std::size_t i = 0; i < r.count; ++i) {
        switch (r.indices[i]) {
          case 0: out[i] = 0.0; break;
          case 1: out[i] = s; break;
          case 2: out[i] = -s; break;
          default:
            throw DecodeError("record " + r.name + ": ternary index " +
                              std::to_string(r.indices[i]) + " at element " +
                              std::to_string(i));
        }
      }
      return out;
    }
  }
  throw DecodeError("unknown scheme in record " + r.name);
}

Payload compress_map(const TensorMap& tensors, const QuantConfig& cfg,
                     const Prng& rng) {
  Payload p;
  p.records.reserve(tensors.size());
  for (const auto& [name, t] : tensors) {
    Prng r = rng.derive(name);
    p.records.push_back(compress_tensor(name, t.values, cfg, r));
  }
  return p;
}

TensorMap decompress_map(const Payload& p, const TensorMap& like) {
  TensorMap out;
  for (const auto& r : p.records) {
    auto it = like.find(r.name);
    if (it == like.end()) throw DecodeError("payload tensor " + r.name + " is not expected");
    if (it->second.size() != r.count) {
      throw DecodeError("payload tensor " + r.name + " has " + std::to_string(r.count) +
                        " values, expected " + std::to_string(it->second.size()));
    }
    out.emplace(r.name, Tensor(it->second.shape, dequantize(r)));
  }
  return out;
}

std::vector<std::uint8_t> pack_indices(std::span<const std::uint32_t> idx,
                                       unsigned width) {
  std::vector<std::uint8_t> out((idx.size() * width + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint32_t v : idx) {
    for (unsigned b = 0; b < width; ++b, ++bit) {
      if ((v >> b) & 1u) out[bit >> 3] |= static_cast<std::uint8_t>(1u << (bit & 7));
    }
  }
  return out;
}

std::vector<std::uint32_t> unpack_indices(std::span<const std::uint8_t> bytes,
                                          std::size_t count, unsigned width) {
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < width; ++b, ++bit) {
      if ((bytes[bit >> 3] >> (bit & 7)) & 1u) v |= 1u << b;
    }
    out[i] = v;
  }
  return out;
}

namespace {
constexpr std::string_view kPayloadMagic = "FQP1";
}

io::Bytes encode_payload(const Payload& p) {
  io::ByteWriter w;
  w.raw(kPayloadMagic);
  w.u32(static_cast<std::uint32_t>(p.records.size()));
  for (const auto& r : p.records) {
    if (r.name.size() > 0xffff) throw UsageError("tensor name too long: " + r.name);
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.raw(r.name);
    const unsigned width = r.scheme == Scheme::none ? 0u : r.index_bits;
    w.u8(static_cast<std::uint8_t>(static_cast<unsigned>(r.scheme) |
                                   (r.zero_centered ? 4u : 0u) | (width << 3)));
    w.u64(r.count);
    switch (r.scheme) {
      case Scheme::none:
        if (r.raw.size() != r.count) throw UsageError("raw record length mismatch");
        for (double v : r.raw) w.f64(v);
        break;
      case Scheme::uniform:
        w.f32(r.lo);
        w.f32(r.hi);
        if (r.zero_centered) w.f32(r.mean);
        w.raw(pack_indices(r.indices, width));
        break;
      case Scheme::terngrad:
        w.f32(r.scale);
        w.raw(pack_indices(r.indices, width));
        break;
    }
  }
  return std::move(w).bytes();
}

Payload decode_payload(std::span<const std::uint8_t> bytes) {
  io::ByteReader rd(bytes);
  if (rd.remaining() < kPayloadMagic.size() || rd.str(kPayloadMagic.size()) != kPayloadMagic) {
    throw DecodeError("bad payload magic at offset 0");
  }
  Payload p;
  const std::uint32_t count = rd.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const std::uint16_t len = rd.u16();
    r.name = rd.str(len);
    const std::size_t scheme_at = rd.offset();
    const std::uint8_t sb = rd.u8();
    const unsigned scheme = sb & 3u;
    const unsigned width = sb >> 3;
    r.zero_centered = (sb & 4u) != 0;
    r.count = rd.u64();
    auto bad = [&](const std::string& what) {
      throw DecodeError("record " + r.name + ": " + what + " at offset " +
                        std::to_string(scheme_at));
    };
    switch (scheme) {
      case 0:
        r.scheme = Scheme::none;
        if (width != 0 || r.zero_centered) bad("flags set on raw record");
        if (r.count > rd.remaining() / 8) rd.fail("raw record " + r.name + " truncated");
        r.raw.resize(r.count);
        for (double& v : r.raw) v = rd.f64();
        break;
      case 1:
        r.scheme = Scheme::uniform;
        if (width < 1 || width > 28) bad("invalid index width " + std::to_string(width));
        r.index_bits = static_cast<std::uint8_t>(width);
        r.lo = rd.f32();
        r.hi = rd.f32();
        if (r.zero_centered) r.mean = rd.f32();
        break;
      case 2:
        r.scheme = Scheme::terngrad;
        if (width != 2 || r.zero_centered) bad("invalid ternary flags");
        r.index_bits = 2;
        r.scale = rd.f32();
        break;
      default:
        bad("unknown scheme " + std::to_string(scheme));
    }
    if (r.scheme != Scheme::none) {
      if (r.count > (rd.remaining() * 8) / width) rd.fail("packed indices of " + r.name + " truncated");
      auto packed = rd.take((r.count * width + 7) / 8);
      r.indices = unpack_indices(packed, r.count, width);
      if (r.scheme == Scheme::terngrad) {
        for (std::size_t j = 0; j < r.indices.size(); ++j)
          if (r.indices[j] > 2) bad("ternary index 3 at element " + std::to_string(j));
      }
    }
    p.records.push_back(std::move(r));
  }
  if (!rd.done()) rd.fail("trailing bytes after payload");
  return p;
}

double cost_bytes(double param_count, double bits, double rounds) {
  if (param_count < 0 || rounds < 0 || bits < 0) {
    throw ConfigError("cost_bytes arguments must be >= 0");
  }
  return param_count * bits / 8.0 * rounds;
}

}  // namespace fedlm
