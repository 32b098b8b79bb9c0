#include <doctest.h>

#include <cmath>

#include "fedlm/compress.hpp"

using namespace fedlm;

namespace {

std::vector<double> random_values(std::size_t n, Prng rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

}  // namespace

TEST_CASE("constant layer quantizes to index zero") {
  const std::vector<double> v(17, 0.375);
  Prng rng(1);
  const auto r = quantize_uniform("c", v, uniform_config(8), rng);
  for (auto i : r.indices) CHECK(i == 0);
  CHECK(dequantize(r) == v);
}

TEST_CASE("two-level rounding probability") {
  // Range [0, 1] is pinned by the endpoints; the middle value is 0.3.
  const std::vector<double> v{0.0, 0.3, 1.0};
  Prng rng(2);
  const int draws = 100000;
  int ups = 0;
  for (int i = 0; i < draws; ++i) {
    const auto r = quantize_uniform("x", v, uniform_config(1), rng);
    CHECK(r.indices[0] == 0);
    CHECK(r.indices[2] == 1);
    ups += static_cast<int>(r.indices[1]);
  }
  const double p = static_cast<double>(ups) / draws;
  const double se = std::sqrt(0.3 * 0.7 / draws);
  CHECK(std::abs(p - 0.3) < 4 * se);
}

TEST_CASE("28-bit resolution") {
  std::vector<double> v = random_values(5000, Prng(3));
  for (double& x : v) x = std::tanh(x);
  v[0] = -1.0;
  v[1] = 1.0;
  Prng rng(4);
  const auto r = quantize_uniform("x", v, uniform_config(28), rng);
  CHECK(r.lo == -1.0f);
  CHECK(r.hi == 1.0f);
  const auto d = dequantize(r);
  const double bound = 2.0 / (std::exp2(28.0) - 1.0);
  CHECK(bound == doctest::Approx(7.45e-9).epsilon(1e-3));
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(d[i] - v[i]) <= bound);
}

TEST_CASE("values on levels round-trip exactly") {
  for (int bits : {1, 2, 5, 8, 12}) {
    Prng rng(bits);
    const std::uint32_t k = 1u << bits;
    TensorRecord grid;
    grid.scheme = Scheme::uniform;
    grid.index_bits = static_cast<std::uint8_t>(bits);
    grid.lo = -0.7f;
    grid.hi = 1.3f;
    grid.count = 200;
    grid.indices.resize(200);
    for (auto& i : grid.indices) i = static_cast<std::uint32_t>(rng.below(k));
    grid.indices[0] = 0;
    grid.indices[1] = k - 1;
    const auto v = dequantize(grid);
    const auto r = quantize_uniform("g", v, uniform_config(bits), rng);
    CHECK(r.indices == grid.indices);
    CHECK(dequantize(r) == v);
  }
}

TEST_CASE("uniform dequantization is unbiased") {
  const auto v = random_values(50, Prng(5));
  Prng rng(6);
  const int draws = 20000;
  for (int bits : {1, 3}) {
    std::vector<double> sum(v.size(), 0.0);
    TensorRecord first;
    for (int t = 0; t < draws; ++t) {
      const TensorRecord r = quantize_uniform("x", v, uniform_config(bits), rng);
      if (t == 0) first = r;
      const auto d = dequantize(r);
      for (std::size_t i = 0; i < v.size(); ++i) sum[i] += d[i];
    }
    // Bernoulli rounding between neighbouring levels: var = step^2 p (1 - p).
    const double step = (static_cast<double>(first.hi) - first.lo) / ((1 << bits) - 1);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double pos = (v[i] - first.lo) / step;
      const double p = pos - std::floor(pos);
      const double se = step * std::sqrt(p * (1 - p) / draws);
      CHECK(std::abs(sum[i] / draws - v[i]) <= 4 * se + 1e-12);
    }
  }
}

TEST_CASE("zero-centering is translation equivariant") {
  const auto v = random_values(300, Prng(7), 0.5);
  std::vector<double> shifted = v;
  for (double& x : shifted) x += 64.0;
  Prng r1(8), r2(8);
  const auto q = uniform_config(4, true);
  const auto d1 = dequantize(quantize_uniform("x", v, q, r1));
  const auto d2 = dequantize(quantize_uniform("x", shifted, q, r2));
  double e1 = 0, e2 = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    e1 += std::abs(d1[i] - v[i]);
    e2 += std::abs(d2[i] - shifted[i]);
  }
  CHECK(e2 == doctest::Approx(e1).epsilon(0.02));
}

TEST_CASE("corrupt index is a decode error") {
  TensorRecord r;
  r.name = "x";
  r.scheme = Scheme::uniform;
  r.index_bits = 2;
  r.count = 1;
  r.indices = {4};
  r.lo = 0;
  r.hi = 1;
  CHECK_THROWS_AS(dequantize(r), DecodeError);
  TensorRecord t;
  t.name = "t";
  t.scheme = Scheme::terngrad;
  t.index_bits = 2;
  t.count = 1;
  t.indices = {3};
  CHECK_THROWS_AS(dequantize(t), DecodeError);
}

TEST_CASE("ternarize examples") {
  const std::vector<double> v{0.5, -1.0, 0.25};
  Prng rng(9);
  // Outcomes for entries 0 and 2 are independent coin flips with p = 0.5 and
  // p = 0.25, so E[out] = (0.5, -1, 0.25).
  std::vector<double> sum(3, 0.0);
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    const auto r = ternarize("x", v, terngrad_config(), rng);
    CHECK(r.scale == 1.0f);
    CHECK(r.indices[1] == 2);
    const auto d = dequantize(r);
    for (int i = 0; i < 3; ++i) sum[i] += d[i];
  }
  CHECK(std::abs(sum[0] / draws - 0.5) < 4 * std::sqrt(0.25 / draws));
  CHECK(sum[1] / draws == -1.0);
  CHECK(std::abs(sum[2] / draws - 0.25) < 4 * std::sqrt(0.25 * 0.75 / draws));

  const std::vector<double> zero(6, 0.0);
  const auto z = ternarize("z", zero, terngrad_config(), rng);
  CHECK(z.scale == 0.0f);
  CHECK(dequantize(z) == zero);

  Payload p;
  p.records.push_back(ternarize("a", std::vector<double>(21000, 1.0), terngrad_config(), rng));
  // 21e6 parameters at log2(3) bits: 33.3 Mbit, 4.16 MB.
  const double bits = 21e6 * kTernaryBits;
  CHECK(bits / 1e6 == doctest::Approx(33.28).epsilon(1e-3));
  CHECK(bits / 8 / 1e6 == doctest::Approx(4.16).epsilon(1e-3));
  CHECK(p.ideal_bits() == doctest::Approx(21000 * kTernaryBits));
}

TEST_CASE("linf clipping clamps to mean +- c std") {
  std::vector<double> v(99, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1.0 : -1.0) * 0.01;
  v.push_back(100.0);
  Prng rng(10);
  QuantConfig q = uniform_config(8, false, true);
  const auto r = quantize_uniform("x", v, q, rng);
  double mean = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / v.size());
  CHECK(r.hi >= mean + 2.5 * sd);
  CHECK(r.hi < mean + 2.5 * sd + 1e-5);
  const auto t = ternarize("x", v, terngrad_config(true), rng);
  CHECK(t.scale < 100.0f);
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(validate_quant(uniform_config(8), Direction::download, "download"));
  CHECK_THROWS_AS(validate_quant(uniform_config(7), Direction::download, "download"),
                  ConfigError);
  CHECK_NOTHROW(validate_quant(uniform_config(1), Direction::upload, "upload"));
  CHECK_THROWS_AS(validate_quant(uniform_config(29), Direction::upload, "upload"),
                  ConfigError);
  QuantConfig frac = uniform_config(8);
  frac.bits = 1.585;
  CHECK_THROWS_AS(validate_quant(frac, Direction::upload, "upload"), ConfigError);
  CHECK_NOTHROW(validate_quant(terngrad_config(), Direction::upload, "upload"));
  QuantConfig tz = terngrad_config();
  tz.zero_center = true;
  CHECK_THROWS_AS(validate_quant(tz, Direction::upload, "upload"), ConfigError);
  CHECK_THROWS_AS(validate_quant(terngrad_config(), Direction::download, "download"),
                  ConfigError);
  try {
    validate_quant(uniform_config(30), Direction::upload, "upload");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("upload_bits", 0) == 0);
  }
}

TEST_CASE("payload wire format") {
  const Payload empty;
  const auto e = encode_payload(empty);
  CHECK(e.size() == 8);
  CHECK(decode_payload(e) == empty);

  // n = 3 at 2 bits packs into a single byte: 1 | 3 << 2 | 2 << 4.
  TensorRecord r;
  r.name = "w";
  r.count = 3;
  r.scheme = Scheme::uniform;
  r.index_bits = 2;
  r.lo = -1;
  r.hi = 1;
  r.indices = {1, 3, 2};
  Payload p;
  p.records.push_back(r);
  const auto bytes = encode_payload(p);
  // magic 4 + count 4 + name len 2 + name 1 + scheme 1 + n 8 + lo/hi 8 + 1
  CHECK(bytes.size() == 29);
  CHECK(bytes.back() == (1 | 3 << 2 | 2 << 4));
  CHECK(bytes[11] == (1 | 2 << 3));
  CHECK(decode_payload(bytes) == p);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_payload(bad), DecodeError);
  bad = bytes;
  bad.pop_back();
  try {
    decode_payload(bad);
    FAIL("expected DecodeError");
  } catch (const DecodeError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_payload(bad), DecodeError);
}

TEST_CASE("pack and unpack are inverse") {
  Prng rng(11);
  for (unsigned width = 1; width <= 28; ++width) {
    std::vector<std::uint32_t> idx(37);
    for (auto& i : idx) i = static_cast<std::uint32_t>(rng.below(std::uint64_t{1} << width));
    const auto packed = pack_indices(idx, width);
    CHECK(packed.size() == (idx.size() * width + 7) / 8);
    CHECK(unpack_indices(packed, idx.size(), width) == idx);
  }
}

TEST_CASE("compress_map uses independent per-tensor streams") {
  TensorMap m{{"a", Tensor({40}, random_values(40, Prng(1)))},
              {"b", Tensor({2, 5}, random_values(10, Prng(2)))}};
  const Prng rng(3);
  const Payload p1 = compress_map(m, uniform_config(4), rng);
  const Payload p2 = compress_map(m, uniform_config(4), rng);
  CHECK(p1 == p2);
  TensorMap only_b{{"b", m.at("b")}};
  CHECK(compress_map(only_b, uniform_config(4), rng).records[0] == p1.records[1]);
  const TensorMap back = decompress_map(decode_payload(encode_payload(p1)), m);
  CHECK(back.at("b").shape == Shape{2, 5});
  const TensorMap raw = decompress_map(compress_map(m, QuantConfig{}, rng), m);
  CHECK(raw == m);
  CHECK(p1.ideal_bits() == 50 * 4);
}

TEST_CASE("cost arithmetic") {
  CHECK(cost_bytes(21.0e6, 32, 10000) / kBytesPerGB == 840.0);
  CHECK(cost_bytes(8.4e6, 8, 10000) / kBytesPerGB == 84.0);
  CHECK(cost_bytes(7.5e6, 8, 10000) / kBytesPerGB == 75.0);
  CHECK(cost_bytes(2 * 21.0e6, 32, 1) == 2 * cost_bytes(21.0e6, 32, 1));
  CHECK_THROWS_AS(cost_bytes(-1, 8, 1), ConfigError);
}
