#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "efaprune/dataset.hpp"
#include "efaprune/engine.hpp"
#include "efaprune/model.hpp"

namespace efaprune {

/// First-order estimate of the loss change when w is zeroed: |g * w|.
double taylor_impact(double w, double g);

using GradientMask = std::vector<unsigned char>;

struct MaskedSnapshot {
  GradientSnapshot snapshot;
  /// Weight tensor name -> 1 where the gradient was zeroed.
  std::map<std::string, GradientMask> masks;
};

/// Zeroes the gradient of every conv/linear weight whose Taylor impact is
/// below epsilon times the largest impact in the same tensor. Impacts that
/// are exactly zero are masked for any epsilon > 0.
MaskedSnapshot mask_gradients(const GradientSnapshot& snapshot, const ModelSpec& model, double epsilon);

/// Gradient of one conv layer unfolded so that column j is filter j's
/// (c_in * k * k)-vector, rows ordered channel-major then kernel row-major.
struct GradientMatrix {
  std::string layer;
  Tensor matrix;
  GradientMask mask;
};

GradientMatrix unfold_kernel_gradient(const Tensor& layer_grad, std::string layer = {},
                                      const GradientMask* mask = nullptr);
/// Inverse of unfold_kernel_gradient for the given <c_out, c_in, k, k> shape.
Tensor fold_kernel_gradient(const GradientMatrix& gm, const Shape& weight_shape);

struct LayerRedundancy {
  std::size_t dominant = 0;
  std::size_t non_dominant = 0;
  std::vector<double> eigenvalues;
  std::vector<double> explained_variance;
  /// All-zero gradient: no variance to explain.
  bool degenerate = false;
};

/// PCA over the matrix with columns (filters) as variables and rows as
/// observations. dominant is the smallest d whose top-d explained variance
/// reaches r.
LayerRedundancy layer_redundancy(const GradientMatrix& gm, double r, bool center = true);

/// sum(non_dominant) / sum(total).
double filter_pruning_ratio(const std::vector<std::pair<std::size_t, std::size_t>>& per_layer);

struct EFAConfig {
  double variance_rate = 0.95;
  double taylor_epsilon = 1e-6;
  /// 0 uses every calibration batch.
  std::size_t calibration_batches = 0;
  std::size_t batch_size = 128;
  bool center = true;
  /// Stack per-batch matrices as extra observation rows instead of averaging.
  bool stack_snapshots = false;
};

void validate(const EFAConfig& config);

struct EFALayer {
  std::string layer;
  std::size_t total_channels = 0;
  std::size_t dominant = 0;
  std::size_t non_dominant = 0;
  bool degenerate = false;
  /// Fraction of weight gradients zeroed by the Taylor mask.
  double masked_fraction = 0.0;
  std::vector<double> eigenvalues;
  std::vector<double> explained_variance;
};

struct EFAReport {
  std::vector<EFALayer> layers;
  double filter_pruning_ratio = 0.0;
  double variance_rate = 0.0;
  double taylor_epsilon = 0.0;
  std::size_t snapshot_count = 0;
};

/// Effective Filter Analysis over the prunable conv layers of `model`.
EFAReport run_efa(const ModelSpec& model, const std::vector<GradientSnapshot>& snapshots, const EFAConfig& config);
EFAReport analyze(const ModelSpec& model, const Dataset& calibration, const EFAConfig& config);

/// Same spectra, different rate: recounts dominant directions only.
EFAReport with_variance_rate(const EFAReport& report, double r);

struct FisherEstimate {
  std::vector<std::string> parameter_ids;
  Tensor matrix;
  std::size_t sample_count = 0;
};

/// Uncentred second moment (1/n) sum g g^T of per-sample gradients.
FisherEstimate fisher_from_gradients(const std::vector<std::vector<double>>& per_sample_grads,
                                     std::vector<std::string> parameter_ids = {});

using ScalarLoss = std::function<double(std::span<const double>)>;

/// Central second differences with step h, symmetrised as (H + H^T) / 2.
Tensor hessian_finite_difference(const ScalarLoss& loss, std::vector<double> theta, double h = 1e-4);

/// Parameter coordinate: tensor name and flat index.
using ParamId = std::pair<std::string, std::size_t>;

/// Hessian of the mean batch loss over at most 64 model coordinates.
Tensor hessian_finite_difference(const ModelSpec& model, const Tensor& batch, std::span<const int> labels,
                                 const std::vector<ParamId>& param_ids, Mode mode = Mode::eval, double h = 1e-4);

struct OverlapPair {
  std::string layer;
  std::size_t first = 0;
  std::size_t second = 0;
  double cosine = 0.0;
};

struct LinearityDeficit {
  std::string layer;
  std::size_t units = 0;
  std::size_t rank = 0;
  std::size_t deficit = 0;
};

struct SingularityReport {
  double tolerance = 0.0;
  std::vector<std::pair<std::string, std::size_t>> elimination;
  std::vector<OverlapPair> overlap;
  std::vector<LinearityDeficit> linearity;
};

/// elimination: filters whose weight norm is below tol * mean norm of the
/// layer. overlap: filter pairs with cosine similarity above 1 - tol.
/// linearity: rank deficit of each conv layer's pre-activation outputs,
/// counting eigenvalues below tol^2 * largest as null directions.
SingularityReport detect_singularities(const ModelSpec& model, const Tensor& batch, double tol = 1e-3);

}  // namespace efaprune
