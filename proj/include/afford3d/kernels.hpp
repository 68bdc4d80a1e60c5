#pragma once

#include <cstddef>
#include <span>

namespace afford3d::kernels {

// Every kernel has a serial reference path and an OpenMP path. Both compute
// each output element with the same reduction order, so they agree bitwise.
enum class Exec { Serial, Parallel };

/// Caps OpenMP threads for the parallel paths (0 = runtime default).
void set_max_threads(int threads);
int max_threads();
/// Applies AFFORD3D_THREADS from the environment, if set.
void apply_thread_env();

/// C = op(A)·op(B) (+ C when accumulate). op(A) is m×k, op(B) is k×n.
/// trans_a: A is stored k×m. trans_b: B is stored n×k.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate, Exec exec = Exec::Parallel);

}  // namespace afford3d::kernels
