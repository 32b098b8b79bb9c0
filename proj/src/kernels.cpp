#include "fedlm/kernels.hpp"

#include <omp.h>

#include "fedlm/tensor.hpp"

namespace fedlm::kernels {
namespace {

void check_sizes(Trans ta, Trans tb, GemmShape s, std::size_t a, std::size_t b,
                 std::size_t c) {
  (void)ta;
  (void)tb;
  if (a != s.m * s.k || b != s.k * s.n || c != s.m * s.n) {
    throw DimensionError("gemm operand sizes do not match " +
                         std::to_string(s.m) + "x" + std::to_string(s.k) +
                         " * " + std::to_string(s.k) + "x" +
                         std::to_string(s.n));
  }
}

// One output row. The inner loops walk k in increasing order for every
// element, which keeps the parallel kernel identical to the reference.
inline void gemm_row(Trans ta, Trans tb, GemmShape s, const double* a,
                     const double* b, double* c, std::size_t i,
                     bool accumulate) {
  double* crow = c + i * s.n;
  if (!accumulate) {
    for (std::size_t j = 0; j < s.n; ++j) crow[j] = 0.0;
  }
  if (tb == Trans::no) {
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = ta == Trans::no ? a[i * s.k + p] : a[p * s.m + i];
      const double* brow = b + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* brow = b + j * s.k;
      double acc = crow[j];
      if (ta == Trans::no) {
        const double* arow = a + i * s.k;
        for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      } else {
        for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * brow[p];
      }
      crow[j] = acc;
    }
  }
}

}  // namespace

void gemm_reference(Trans ta, Trans tb, GemmShape s, std::span<const double> a,
                    std::span<const double> b, std::span<double> c,
                    bool accumulate) {
  check_sizes(ta, tb, s, a.size(), b.size(), c.size());
  // Textbook triple loop.
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = accumulate ? c[i * s.n + j] : 0.0;
      for (std::size_t p = 0; p < s.k; ++p) {
        double av = ta == Trans::no ? a[i * s.k + p] : a[p * s.m + i];
        double bv = tb == Trans::no ? b[p * s.n + j] : b[j * s.k + p];
        acc += av * bv;
      }
      c[i * s.n + j] = acc;
    }
  }
}

void gemm_parallel(Trans ta, Trans tb, GemmShape s, std::span<const double> a,
                   std::span<const double> b, std::span<double> c,
                   bool accumulate) {
  check_sizes(ta, tb, s, a.size(), b.size(), c.size());
  const long m = static_cast<long>(s.m);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < m; ++i) {
    gemm_row(ta, tb, s, a.data(), b.data(), c.data(),
             static_cast<std::size_t>(i), accumulate);
  }
}

void gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  if (s.m * s.n * s.k >= kParallelWork && !omp_in_parallel() &&
      omp_get_max_threads() > 1) {
    gemm_parallel(ta, tb, s, a, b, c, accumulate);
    return;
  }
  check_sizes(ta, tb, s, a.size(), b.size(), c.size());
  for (std::size_t i = 0; i < s.m; ++i) {
    gemm_row(ta, tb, s, a.data(), b.data(), c.data(), i, accumulate);
  }
}

void axpy_reference(double alpha, std::span<const double> x,
                    std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void axpy_parallel(double alpha, std::span<const double> x,
                   std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy size mismatch");
  const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace fedlm::kernels
