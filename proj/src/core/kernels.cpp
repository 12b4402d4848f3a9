#include "efaprune/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace efaprune::kernels {

namespace {

std::size_t threads_from_env() {
  if (const char* env = std::getenv("EFAPRUNE_THREADS")) {
    try {
      long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return 1;
}

std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n{threads_from_env()};
  return n;
}

constexpr std::size_t kBlockK = 128;
// Below this many multiply-adds a thread launch costs more than it saves.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 22;

void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k,
               const double* a, const double* b, double* c) {
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = std::min(k, k0 + kBlockK);
    std::size_t i = row_begin;
    for (; i + 4 <= row_end; i += 4) {
      double* c0 = c + i * n;
      double* c1 = c0 + n;
      double* c2 = c1 + n;
      double* c3 = c2 + n;
      const double* a0 = a + i * k;
      const double* a1 = a0 + k;
      const double* a2 = a1 + k;
      const double* a3 = a2 + k;
      for (std::size_t p = k0; p < k1; ++p) {
        const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double bv = bp[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    }
    for (; i < row_end; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::size_t p = k0; p < k1; ++p) {
        const double v = ai[p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += v * bp[j];
      }
    }
  }
}

}  // namespace

std::size_t thread_count() { return thread_setting().load(); }

void set_thread_count(std::size_t n) { thread_setting().store(std::max<std::size_t>(1, n)); }

void parallel_rows(std::size_t n, std::size_t work_per_row,
                   const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1 || n * work_per_row < kParallelThreshold) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  parallel_rows(m, n * k, [&](std::size_t r0, std::size_t r1) { gemm_rows(r0, r1, n, k, a, b, c); });
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> at(m * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t col = c0; col < c1; ++col) dst[col * rows + r] = src[r * cols + col];
    }
  }
}

}  // namespace efaprune::kernels
