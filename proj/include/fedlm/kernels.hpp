#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels. Every kernel has a serial reference implementation
// and an OpenMP implementation. Both sum each output element over the inner
// dimension in increasing index order starting from the existing output
// value, so they agree bit-for-bit; tests rely on that.
namespace fedlm::kernels {

enum class Trans { no, yes };

struct GemmShape {
  std::size_t m;  // rows of op(A) and C
  std::size_t n;  // cols of op(B) and C
  std::size_t k;  // inner dimension
};

// C = op(A) * op(B), or C += op(A) * op(B) when accumulate is set.
// A is stored m x k (k x m if transposed), B is k x n (n x k if transposed).
void gemm_reference(Trans ta, Trans tb, GemmShape s, std::span<const double> a,
                    std::span<const double> b, std::span<double> c,
                    bool accumulate);
void gemm_parallel(Trans ta, Trans tb, GemmShape s, std::span<const double> a,
                   std::span<const double> b, std::span<double> c,
                   bool accumulate);
// Chooses the parallel kernel for large products when not already inside an
// OpenMP parallel region.
void gemm(Trans ta, Trans tb, GemmShape s, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

// y += alpha * x
void axpy_reference(double alpha, std::span<const double> x,
                    std::span<double> y);
void axpy_parallel(double alpha, std::span<const double> x,
                   std::span<double> y);

// Work threshold (m*n*k) above which gemm() goes parallel.
inline constexpr std::size_t kParallelWork = 1u << 18;

}  // namespace fedlm::kernels
