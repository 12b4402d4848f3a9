#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "efaprune/dataset.hpp"
#include "efaprune/model.hpp"

namespace efaprune {

/// train: BatchNorm normalises with batch statistics. eval: running statistics.
enum class Mode { train, eval };

/// Cached state of one layer after a forward pass.
struct LayerTrace {
  /// Layer output. For conv this is the pre-activation Z.
  Tensor output;
  /// batchnorm: per-channel batch mean and inverse std; maxpool: argmax flat index.
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::vector<double> batch_var;
  std::vector<std::size_t> argmax;
  /// residual block: member traces and the shortcut+main sum before the ReLU.
  std::vector<LayerTrace> members;
};

struct ForwardResult {
  Tensor input;
  std::vector<LayerTrace> layers;
  double loss = 0.0;
  std::size_t correct = 0;
  Mode mode = Mode::train;

  /// Softmax probabilities <n, classes>.
  const Tensor& probabilities() const { return layers.back().output; }
};

/// Runs the network on a batch; loss is mean cross-entropy over the batch.
ForwardResult forward(const ModelSpec& model, const Tensor& batch, std::span<const int> labels,
                      Mode mode = Mode::train);

/// Gradient of the mean loss for every trainable parameter.
struct GradientSnapshot {
  ParamStore gradients;
  double loss = 0.0;
  std::size_t batch_index = 0;
  std::size_t batch_size = 0;
};

GradientSnapshot backward(const ModelSpec& model, const ForwardResult& fwd, std::span<const int> labels);
GradientSnapshot backward(const ModelSpec& model, const Tensor& batch, std::span<const int> labels,
                          Mode mode = Mode::train);

/// One snapshot per calibration mini-batch, evaluated in eval mode; the
/// model is taken by const reference and never updated.
std::vector<GradientSnapshot> capture_gradient_matrices(const ModelSpec& model, const Dataset& calibration,
                                                        std::size_t batch_size);

/// Top-1 accuracy in eval mode.
double evaluate_accuracy(const ModelSpec& model, const Dataset& data, std::size_t batch_size = 256);

/// Mean loss over the dataset in the given mode (used by finite-difference checks).
double mean_loss(const ModelSpec& model, const Tensor& batch, std::span<const int> labels, Mode mode);

/// Outputs of every top-level layer, recorded on the eval-mode forward pass.
std::vector<Tensor> layer_outputs(const ModelSpec& model, const Tensor& batch, Mode mode = Mode::eval);

/// Updates BatchNorm running statistics from a train-mode forward pass.
void update_running_stats(ModelSpec& model, const ForwardResult& fwd, double momentum = 0.1);

}  // namespace efaprune
