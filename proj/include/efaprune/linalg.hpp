#pragma once

#include <cstddef>
#include <vector>

#include "efaprune/tensor.hpp"

namespace efaprune {

struct SpectralDecomposition {
  /// Sorted descending; ties keep the original diagonal order.
  std::vector<double> eigenvalues;
  /// n x n, column i is the unit eigenvector for eigenvalues[i].
  Tensor eigenvectors;
  /// eigenvalue_i / sum. Empty when the spectrum has negative eigenvalues
  /// beyond round-off, since the ratio is meaningless then.
  std::vector<double> explained_variance_ratio;
  /// Total variance is zero; every ratio is reported as 0.
  bool degenerate = false;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
double frobenius_norm(const Tensor& t);
double trace(const Tensor& m);

/// Cyclic Jacobi eigensolver for symmetric matrices.
SpectralDecomposition sym_eig(const Tensor& m);

/// n_obs x n_var observations -> n_var x n_var covariance. Centred: column
/// means removed, divided by n_obs - 1. Uncentred: E[g g^T], divided by n_obs.
Tensor covariance(const Tensor& observations, bool center = true);

/// sym_eig(covariance(observations, center)).
SpectralDecomposition pca_spectrum(const Tensor& observations, bool center = true);

/// Explained-variance ratios after clamping eigenvalues below 1e-12 * max to 0.
/// Returns an empty vector when an eigenvalue is negative beyond round-off.
std::vector<double> variance_ratios(const std::vector<double>& eigenvalues, bool* degenerate);

}  // namespace efaprune
