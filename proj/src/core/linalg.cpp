#include "efaprune/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "efaprune/error.hpp"
#include "efaprune/kernels.hpp"

namespace efaprune {

namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kClampRelative = 1e-12;
constexpr int kMaxSweeps = 100;

void require_matrix(const Tensor& t, const char* what) {
  require(t.rank() == 2, ErrorCode::shape_mismatch,
          std::string(what) + " must be rank-2, got " + shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  require(a.dim(1) == b.dim(0), ErrorCode::shape_mismatch,
          "matmul inner dimensions disagree: " + shape_string(a.shape()) + " x " +
              shape_string(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm_nn(a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), c.data(), false);
  return c;
}

Tensor transpose(const Tensor& m) {
  require_matrix(m, "transpose input");
  Tensor t({m.dim(1), m.dim(0)});
  kernels::transpose(m.dim(0), m.dim(1), m.data(), t.data());
  return t;
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

double trace(const Tensor& m) {
  require_matrix(m, "trace input");
  require(m.dim(0) == m.dim(1), ErrorCode::shape_mismatch, "trace of non-square matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < m.dim(0); ++i) s += m.at(i, i);
  return s;
}

std::vector<double> variance_ratios(const std::vector<double>& eigenvalues, bool* degenerate) {
  if (degenerate) *degenerate = false;
  if (eigenvalues.empty()) return {};
  double max_abs = 0.0;
  for (double v : eigenvalues) max_abs = std::max(max_abs, std::abs(v));
  const double negative_tol = 1e-10 * std::max(1.0, max_abs);
  for (double v : eigenvalues)
    if (v < -negative_tol) return {};

  const double lambda_max = *std::max_element(eigenvalues.begin(), eigenvalues.end());
  std::vector<double> clamped(eigenvalues.size());
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    const double v = eigenvalues[i];
    clamped[i] = (lambda_max <= 0.0 || v < kClampRelative * lambda_max) ? 0.0 : v;
  }
  const double total = std::accumulate(clamped.begin(), clamped.end(), 0.0);
  std::vector<double> ratios(eigenvalues.size(), 0.0);
  if (!(total > 0.0)) {
    if (degenerate) *degenerate = true;
    return ratios;
  }
  for (std::size_t i = 0; i < clamped.size(); ++i) ratios[i] = clamped[i] / total;
  return ratios;
}

SpectralDecomposition sym_eig(const Tensor& m) {
  require_matrix(m, "sym_eig input");
  const std::size_t n = m.dim(0);
  require(n == m.dim(1), ErrorCode::shape_mismatch,
          "sym_eig needs a square matrix, got " + shape_string(m.shape()));
  require(m.all_finite(), ErrorCode::numerical, "sym_eig input has non-finite entries");

  double scale = 0.0;
  for (double v : m.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(std::abs(m.at(i, j) - m.at(j, i)) <= kSymmetryTol * std::max(1.0, scale),
              ErrorCode::invalid_argument,
              "sym_eig input is not symmetric at (" + std::to_string(i) + "," +
                  std::to_string(j) + ")");

  // Work on the symmetrised copy so round-off in the input never biases rotations.
  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = 0.5 * (m.at(i, j) + m.at(j, i));
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(2.0 * s);
  };
  double total_norm = 0.0;
  for (double x : a) total_norm += x * x;
  total_norm = std::sqrt(total_norm);

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (off_norm() <= 1e-15 * total_norm) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });

  SpectralDecomposition out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Tensor({n, n});
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    out.eigenvalues[col] = a[src * n + src];
    // Sign convention: largest-magnitude component positive.
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v[k * n + src]) > std::abs(v[arg * n + src])) arg = k;
    const double sign = v[arg * n + src] < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors.at(k, col) = sign * v[k * n + src];
  }
  out.explained_variance_ratio = variance_ratios(out.eigenvalues, &out.degenerate);
  return out;
}

Tensor covariance(const Tensor& observations, bool center) {
  require_matrix(observations, "covariance observations");
  const std::size_t n_obs = observations.dim(0);
  const std::size_t n_var = observations.dim(1);
  require(n_obs >= (center ? 2u : 1u), ErrorCode::invalid_argument,
          "covariance needs at least " + std::to_string(center ? 2 : 1) + " observations, got " +
              std::to_string(n_obs));

  std::vector<double> x(observations.values().begin(), observations.values().end());
  if (center) {
    for (std::size_t j = 0; j < n_var; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n_obs; ++i) mean += x[i * n_var + j];
      mean /= static_cast<double>(n_obs);
      for (std::size_t i = 0; i < n_obs; ++i) x[i * n_var + j] -= mean;
    }
  }
  const double norm = center ? static_cast<double>(n_obs - 1) : static_cast<double>(n_obs);
  Tensor cov({n_var, n_var});
  for (std::size_t i = 0; i < n_obs; ++i) {
    const double* row = &x[i * n_var];
    for (std::size_t p = 0; p < n_var; ++p) {
      const double rp = row[p];
      if (rp == 0.0) continue;
      double* out = cov.data() + p * n_var;
      for (std::size_t q = p; q < n_var; ++q) out[q] += rp * row[q];
    }
  }
  for (std::size_t p = 0; p < n_var; ++p) {
    for (std::size_t q = p; q < n_var; ++q) {
      const double v = cov.at(p, q) / norm;
      cov.at(p, q) = v;
      cov.at(q, p) = v;
    }
  }
  return cov;
}

SpectralDecomposition pca_spectrum(const Tensor& observations, bool center) {
  return sym_eig(covariance(observations, center));
}

}  // namespace efaprune
