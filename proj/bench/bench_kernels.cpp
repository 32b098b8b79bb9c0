// Serial reference vs OpenMP kernels: timing and bitwise agreement.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <vector>

#include "fedlm/kernels.hpp"
#include "fedlm/tensor.hpp"

using fedlm::kernels::GemmShape;
using fedlm::kernels::Trans;

namespace {

template <typename F>
double best_ms(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", omp_get_max_threads());
  std::printf("%-18s %12s %12s %8s %10s\n", "gemm m,n,k", "serial_ms", "omp_ms", "speedup",
              "identical");
  fedlm::Prng rng(7);
  const GemmShape shapes[] = {{64, 64, 64}, {256, 256, 256}, {480, 128, 512}, {30, 4000, 512}};
  for (const auto s : shapes) {
    std::vector<double> a(s.m * s.k), b(s.k * s.n), c1(s.m * s.n), c2(s.m * s.n);
    for (double& v : a) v = rng.uniform(-1, 1);
    for (double& v : b) v = rng.uniform(-1, 1);
    const int reps = s.m * s.n * s.k > (1u << 24) ? 3 : 10;
    const double ts = best_ms(reps, [&] {
      fedlm::kernels::gemm_reference(Trans::no, Trans::no, s, a, b, c1, false);
    });
    const double tp = best_ms(reps, [&] {
      fedlm::kernels::gemm_parallel(Trans::no, Trans::no, s, a, b, c2, false);
    });
    char label[32];
    std::snprintf(label, sizeof label, "%zu,%zu,%zu", s.m, s.n, s.k);
    std::printf("%-18s %12.3f %12.3f %8.2f %10s\n", label, ts, tp, ts / tp,
                c1 == c2 ? "yes" : "NO");
  }
  return 0;
}
