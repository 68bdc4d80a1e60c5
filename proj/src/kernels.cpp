#include "afford3d/kernels.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

#include "afford3d/error.hpp"

namespace afford3d::kernels {

namespace {
int g_max_threads = 0;
// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

void set_max_threads(int threads) {
  g_max_threads = threads < 0 ? 0 : threads;
  if (g_max_threads > 0) omp_set_num_threads(g_max_threads);
}

int max_threads() { return g_max_threads > 0 ? g_max_threads : omp_get_max_threads(); }

void apply_thread_env() {
  if (const char* env = std::getenv("AFFORD3D_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) set_max_threads(static_cast<int>(v));
  }
}

namespace {

inline void gemm_row(bool trans_a, bool trans_b, std::size_t i, std::size_t m, std::size_t n,
                     std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
  double* crow = c + i * n;
  if (!accumulate)
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
  if (!trans_b) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = trans_a ? a[p * m + i] : a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += (trans_a ? a[p * m + i] : a[i * k + p]) * brow[p];
      crow[j] += s;
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate, Exec exec) {
  if (a.size() != m * k || b.size() != k * n || c.size() != m * n) {
    fail(ErrorKind::Shape, "gemm: buffer sizes do not match " + std::to_string(m) + "x" +
                               std::to_string(k) + " * " + std::to_string(k) + "x" +
                               std::to_string(n));
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  if (exec == Exec::Serial || m < 2 || m * n * k < kParallelWork) {
    for (std::size_t i = 0; i < m; ++i) gemm_row(trans_a, trans_b, i, m, n, k, pa, pb, pc, accumulate);
    return;
  }
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(trans_a, trans_b, static_cast<std::size_t>(i), m, n, k, pa, pb, pc, accumulate);
}

}  // namespace afford3d::kernels
