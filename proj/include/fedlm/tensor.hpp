#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedlm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};
class IndexError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class DecodeError : public Error {
 public:
  using Error::Error;
};
class ParseError : public Error {
 public:
  using Error::Error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  // Matrix view: a rank-1 tensor is a single row, a scalar is 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values[r * cols() + c];
  }

  bool operator==(const Tensor&) const = default;
};

bool all_finite(const Tensor& t);
// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(const Tensor& t, std::string_view what);

/// Counter-based splittable generator.
///
/// A stream is identified by a 64-bit key; draw i is mix(key + i*gamma)
/// (the SplitMix64 finalizer). derive() hashes a label into the key, so a
/// path such as (round, client, "upload") names a reproducible stream that
/// does not depend on how many draws other streams have consumed.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : key_(mix(seed ^ kSeedSalt)) {}

  Prng derive(std::uint64_t label) const;
  Prng derive(std::string_view label) const;
  template <typename First, typename Second, typename... Rest>
  Prng derive(First first, Second second, Rest... rest) const {
    return derive(first).derive(second, rest...);
  }

  std::uint64_t next_u64() {
    return mix(key_ + (++counter_) * kGamma);
  }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();
  double exponential() { return -std::log1p(-uniform()); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  struct FromKey {};
  Prng(FromKey, std::uint64_t key) : key_(key) {}

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kSeedSalt = 0x5851f42d4c957f2dULL;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fedlm
