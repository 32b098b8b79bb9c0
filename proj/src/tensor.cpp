#include "fedlm/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace fedlm {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)), values(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
}

std::size_t Tensor::rows() const {
  if (shape.size() <= 1) return 1;
  return shape_size(shape) / shape.back();
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return shape.back();
}

bool all_finite(const Tensor& t) {
  for (double v : t.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, std::string_view what) {
  if (!all_finite(t)) {
    throw NumericError("non-finite value produced by " + std::string(what));
  }
}

Prng Prng::derive(std::uint64_t label) const {
  return Prng(FromKey{}, mix(key_ ^ mix(label + kGamma)));
}

Prng Prng::derive(std::string_view label) const {
  // FNV-1a, then the integer path.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive(h ^ 0x2545f4914f6cdd1dULL);
}

std::uint64_t Prng::below(std::uint64_t n) {
  if (n == 0) throw UsageError("Prng::below(0)");
  // Rejection sampling on the top of the range.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Prng::normal() {
  // Box-Muller; discards the second variate to keep the stream stateless.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace fedlm
