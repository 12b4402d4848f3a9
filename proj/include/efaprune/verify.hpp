#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "efaprune/engine.hpp"
#include "efaprune/model.hpp"
#include "efaprune/tensor.hpp"

namespace efaprune {

/// Plain triple loop, used as a reference for the blocked kernels.
Tensor naive_matmul(const Tensor& a, const Tensor& b);

/// Eigenvalues (descending) by Householder tridiagonalisation and Sturm
/// sequence bisection; shares no code with the Jacobi solver.
std::vector<double> bisection_eigenvalues(const Tensor& symmetric);

struct GradientCheck {
  std::size_t sampled = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

/// Compares backward() with central differences of the mean loss on
/// `samples` randomly chosen coordinates:
/// |analytic - numeric| / max(|analytic|, 1e-8).
GradientCheck gradient_check(const ModelSpec& model, const Tensor& batch, std::span<const int> labels,
                             std::size_t samples, std::uint64_t seed, Mode mode = Mode::train, double h = 1e-5);

/// Two-feature logistic regression without intercept, data drawn from the
/// model itself so the Fisher identity holds at the optimum.
struct LogisticToy {
  std::vector<double> x;  // n x 2, row-major
  std::vector<int> y;
  std::vector<double> theta{0.0, 0.0};

  std::size_t size() const { return y.size(); }
};

LogisticToy make_logistic_toy(std::size_t n, std::uint64_t seed, double theta1 = 1.0, double theta2 = -0.5);

double logistic_mean_nll(const LogisticToy& toy, std::span<const double> theta);
std::vector<double> logistic_gradient(const LogisticToy& toy, std::span<const double> theta);

/// Newton iterations on the mean NLL until the gradient norm is below `tol`;
/// returns the final gradient norm.
double fit_logistic(LogisticToy& toy, double tol = 1e-10, std::size_t max_iter = 100);

struct FisherHessianCheck {
  double gradient_norm = 0.0;
  double relative_frobenius = 0.0;
  Tensor fisher;
  Tensor hessian;
};

/// Fits the toy, then compares the per-sample gradient second moment with
/// the finite-difference Hessian of the mean NLL.
FisherHessianCheck fisher_hessian_check(std::size_t n, std::uint64_t seed);

struct VerifyResult {
  std::string name;
  bool passed = false;
  double error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Embedded oracle suites: kernel product, eigensolver, finite-difference
/// gradients and the Fisher/Hessian toy.
std::vector<VerifyResult> run_verification(std::uint64_t seed = 1);

}  // namespace efaprune
