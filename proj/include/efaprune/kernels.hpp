#pragma once

#include <cstddef>
#include <functional>

// Raw row-major GEMM kernels shared by linalg and the network engine.
// Work is split across threads only by output rows, so every output element
// is reduced in the same order regardless of the thread count.

namespace efaprune::kernels {

/// Worker count from EFAPRUNE_THREADS (default 1), overridable at runtime.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs fn(begin, end) over [0, n) in contiguous chunks.
void parallel_rows(std::size_t n, std::size_t work_per_row,
                   const std::function<void(std::size_t, std::size_t)>& fn);

/// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

/// C[m x n] (+)= A[m x k] * B^T where B is stored [n x k]
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

/// C[m x n] (+)= A^T * B where A is stored [k x m]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

}  // namespace efaprune::kernels
