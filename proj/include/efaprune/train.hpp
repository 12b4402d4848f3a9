#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "efaprune/dataset.hpp"
#include "efaprune/model.hpp"

namespace efaprune {

enum class Augmentation { none, shift_mirror };

const char* augmentation_name(Augmentation a);
Augmentation parse_augmentation(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr_initial = 0.1;
  std::vector<std::size_t> lr_milestones;
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 30;
  Augmentation augmentation = Augmentation::none;
  /// Seeds the per-epoch shuffle and augmentation streams.
  std::uint64_t seed = 0;
};

/// Milestones at 50% and 75% of `epochs` (dropped when they collapse to 0 or
/// coincide).
std::vector<std::size_t> default_milestones(std::size_t epochs);

void validate(const TrainConfig& config);

/// Learning rate in effect during `epoch` (0-based).
double learning_rate(const TrainConfig& config, std::size_t epoch);

/// Everything needed to continue training bit-identically.
struct TrainState {
  ModelSpec model;
  /// SGD velocity per parameter; empty until the first step.
  ParamStore momentum;
  /// Number of completed epochs.
  std::size_t epoch = 0;
  std::vector<double> loss_curve;
  std::vector<double> train_accuracy;
};

TrainState start_training(ModelSpec model);

struct EpochMetrics {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

enum class TrainStatus { completed, diverged };

struct TrainOutcome {
  TrainStatus status = TrainStatus::completed;
  /// Set when diverged: the epoch whose loss went non-finite.
  std::size_t failed_epoch = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Runs epochs state.epoch .. config.epochs-1. The shuffle order of an epoch
/// depends only on (config.seed, epoch), so training resumed from a saved
/// state reproduces the uninterrupted run. On a non-finite loss the state is
/// rolled back to the end of the last finite epoch.
TrainOutcome train(TrainState& state, const Dataset& data, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

/// One SGD step (PyTorch convention): v = mu v + (g + wd p); p -= lr v.
void sgd_step(ParamStore& params, ParamStore& velocity, const ParamStore& grads, double lr, double momentum,
              double weight_decay);

}  // namespace efaprune
