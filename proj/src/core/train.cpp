#include "efaprune/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "efaprune/engine.hpp"
#include "efaprune/error.hpp"

namespace efaprune {

namespace {

constexpr std::size_t kShiftPad = 4;

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x7e57u};
  return std::mt19937_64(seq);
}

// Random translation by up to kShiftPad pixels (zero fill) and a coin-flip
// horizontal mirror, applied per sample.
void shift_mirror(Tensor& batch, std::mt19937_64& rng) {
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (h < 2 * kShiftPad || w < 2 * kShiftPad) return;
  std::vector<double> plane(h * w);
  const long span = 2 * static_cast<long>(kShiftPad) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const long dy = static_cast<long>(rng() % span) - static_cast<long>(kShiftPad);
    const long dx = static_cast<long>(rng() % span) - static_cast<long>(kShiftPad);
    const bool mirror = (rng() & 1u) != 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = &batch.at(i, ch, 0, 0);
      std::copy_n(p, h * w, plane.begin());
      for (std::size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) + dy;
        for (std::size_t x = 0; x < w; ++x) {
          const long tx = mirror ? static_cast<long>(w - 1 - x) : static_cast<long>(x);
          const long sx = tx + dx;
          const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
          p[y * w + x] = inside ? plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : 0.0;
        }
      }
    }
  }
}

}  // namespace

const char* augmentation_name(Augmentation a) {
  return a == Augmentation::shift_mirror ? "shift-mirror" : "none";
}

Augmentation parse_augmentation(const std::string& name) {
  if (name == "none") return Augmentation::none;
  if (name == "shift-mirror") return Augmentation::shift_mirror;
  fail(ErrorCode::invalid_argument, "unknown augmentation '" + name + "'");
}

std::vector<std::size_t> default_milestones(std::size_t epochs) {
  std::vector<std::size_t> out;
  for (std::size_t m : {epochs / 2, epochs * 3 / 4})
    if (m > 0 && m < epochs && (out.empty() || m > out.back())) out.push_back(m);
  return out;
}

void validate(const TrainConfig& c) {
  require(c.batch_size > 0, ErrorCode::invalid_argument, "batch_size must be positive");
  require(c.epochs > 0, ErrorCode::invalid_argument, "epochs must be positive");
  require(std::isfinite(c.lr_initial) && c.lr_initial >= 0.0, ErrorCode::invalid_argument,
          "lr must be finite and non-negative");
  require(c.lr_decay > 0.0 && c.lr_decay <= 1.0, ErrorCode::invalid_argument, "lr_decay must be in (0,1]");
  require(c.momentum >= 0.0 && c.momentum < 1.0, ErrorCode::invalid_argument, "momentum must be in [0,1)");
  require(std::isfinite(c.weight_decay) && c.weight_decay >= 0.0, ErrorCode::invalid_argument,
          "weight_decay must be non-negative");
  for (std::size_t i = 0; i < c.lr_milestones.size(); ++i) {
    require(c.lr_milestones[i] < c.epochs, ErrorCode::invalid_argument, "lr milestones must be < epochs");
    require(i == 0 || c.lr_milestones[i] > c.lr_milestones[i - 1], ErrorCode::invalid_argument,
            "lr milestones must be strictly increasing");
  }
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  double lr = config.lr_initial;
  for (std::size_t m : config.lr_milestones)
    if (epoch >= m) lr *= config.lr_decay;
  return lr;
}

TrainState start_training(ModelSpec model) {
  TrainState s;
  s.model = std::move(model);
  return s;
}

void sgd_step(ParamStore& params, ParamStore& velocity, const ParamStore& grads, double lr, double momentum,
              double weight_decay) {
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto [it, inserted] = velocity.try_emplace(name, p.shape());
    Tensor& v = it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double step = g[i] + weight_decay * p[i];
      v[i] = inserted ? step : momentum * v[i] + step;
      p[i] -= lr * v[i];
    }
  }
}

TrainOutcome train(TrainState& state, const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  validate(data);
  validate(state.model);
  require(data.class_count <= state.model.num_classes, ErrorCode::shape_mismatch,
          "dataset has more classes than the model outputs");
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  TrainOutcome outcome;
  while (state.epoch < config.epochs) {
    const std::size_t epoch = state.epoch;
    const double lr = learning_rate(config, epoch);
    TrainState rollback = state;
    std::mt19937_64 rng = epoch_rng(config.seed, epoch);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    bool finite = true;
    for (std::size_t begin = 0; begin < n && finite; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
      Tensor batch = batch_images(data, idx);
      const auto labels = batch_labels(data, idx);
      if (config.augmentation == Augmentation::shift_mirror) shift_mirror(batch, rng);
      ForwardResult fwd = forward(state.model, batch, labels, Mode::train);
      if (!std::isfinite(fwd.loss)) {
        finite = false;
        break;
      }
      GradientSnapshot g = backward(state.model, fwd, labels);
      update_running_stats(state.model, fwd);
      sgd_step(state.model.parameters, state.momentum, g.gradients, lr, config.momentum, config.weight_decay);
      loss_sum += fwd.loss * static_cast<double>(idx.size());
      correct += fwd.correct;
    }
    // A finite loss can still be followed by a step that overflows the weights.
    for (const auto& [name, t] : state.model.parameters) finite = finite && t.all_finite();
    if (!finite || !std::isfinite(loss_sum)) {
      state = std::move(rollback);
      outcome.status = TrainStatus::diverged;
      outcome.failed_epoch = epoch;
      return outcome;
    }
    EpochMetrics m{epoch, lr, loss_sum / static_cast<double>(n),
                   static_cast<double>(correct) / static_cast<double>(n)};
    state.loss_curve.push_back(m.loss);
    state.train_accuracy.push_back(m.train_accuracy);
    ++state.epoch;
    if (on_epoch) on_epoch(m);
  }
  return outcome;
}

}  // namespace efaprune
