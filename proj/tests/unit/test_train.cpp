#include <doctest.h>

#include <cmath>
#include <limits>

#include "efaprune/checkpoint.hpp"
#include "efaprune/dataset.hpp"
#include "efaprune/engine.hpp"
#include "efaprune/train.hpp"
#include "test_support.hpp"

using namespace efaprune;
using testing::error_code_of;

namespace {

TrainConfig quick_config(std::size_t epochs) {
  TrainConfig c;
  c.batch_size = 32;
  c.lr_initial = 0.05;
  c.epochs = epochs;
  c.lr_milestones = default_milestones(epochs);
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("schedule follows milestones") {
  CHECK(default_milestones(160) == std::vector<std::size_t>{80, 120});
  CHECK(default_milestones(30) == std::vector<std::size_t>{15, 22});
  TrainConfig c;
  c.epochs = 160;
  c.lr_milestones = {80, 120};
  CHECK(learning_rate(c, 0) == 0.1);
  CHECK(learning_rate(c, 79) == 0.1);
  CHECK(learning_rate(c, 80) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(learning_rate(c, 159) == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.lr_milestones = {10, 5};
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::invalid_argument);
  c.lr_milestones = {40};
  c.epochs = 30;
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::invalid_argument);
  c = TrainConfig{};
  c.lr_initial = -1.0;
  CHECK(error_code_of([&] { validate(c); }) == ErrorCode::invalid_argument);
  CHECK(parse_augmentation("shift-mirror") == Augmentation::shift_mirror);
  CHECK(error_code_of([] { parse_augmentation("rotate"); }) == ErrorCode::invalid_argument);
}

TEST_CASE("sgd step uses the PyTorch momentum convention") {
  ParamStore p{{"w", Tensor({2}, std::vector<double>{1.0, -2.0})}};
  ParamStore v;
  const ParamStore g{{"w", Tensor({2}, std::vector<double>{0.5, 0.25})}};
  sgd_step(p, v, g, 0.1, 0.9, 0.01);
  // First step: v = g + wd p.
  CHECK(v.at("w")[0] == doctest::Approx(0.51));
  CHECK(v.at("w")[1] == doctest::Approx(0.23));
  CHECK(p.at("w")[0] == doctest::Approx(1.0 - 0.051));
  sgd_step(p, v, g, 0.1, 0.9, 0.01);
  const double v0 = 0.9 * 0.51 + 0.5 + 0.01 * (1.0 - 0.051);
  CHECK(v.at("w")[0] == doctest::Approx(v0));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 60, 3);
  TrainState s = start_training(make_preset("mlp", {2, 1, 1}, 3, 1));
  const ParamStore before = s.model.parameters;
  TrainConfig c = quick_config(3);
  c.lr_initial = 0.0;
  c.weight_decay = 0.0;
  REQUIRE(train(s, d, c).status == TrainStatus::completed);
  CHECK(s.model.parameters == before);
  CHECK(s.epoch == 3);
}

TEST_CASE("separable data is learned to 100% training accuracy") {
  const Dataset d = synth_dataset(SynthKind::separable_2d, 400, 5);
  TrainState s = start_training(make_preset("mlp", {2, 1, 1}, 2, 2));
  TrainConfig c = quick_config(40);
  c.lr_initial = 0.1;
  REQUIRE(train(s, d, c).status == TrainStatus::completed);
  CHECK(s.train_accuracy.back() == 1.0);
  CHECK(evaluate_accuracy(s.model, d) == 1.0);
}

TEST_CASE("training is deterministic for a seed") {
  const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 90, 4);
  auto run = [&](std::uint64_t seed) {
    TrainState s = start_training(testing::small_cnn({2, 1, 1}, 3, {4, 4}, 3));
    TrainConfig c = quick_config(4);
    c.seed = seed;
    train(s, d, c);
    return s;
  };
  const TrainState a = run(1), b = run(1), other = run(2);
  CHECK(a.model.parameters == b.model.parameters);
  CHECK(a.model.buffers == b.model.buffers);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.loss_curve != other.loss_curve);
}

TEST_CASE("resumed training equals uninterrupted training") {
  const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 90, 4);
  TrainConfig c = quick_config(5);
  TrainState full = start_training(testing::small_cnn({2, 1, 1}, 3, {4}, 8));
  TrainState part = full;
  train(full, d, c);

  TrainConfig first = c;
  first.epochs = 2;
  first.lr_milestones.clear();
  for (std::size_t m : c.lr_milestones)
    if (m < 2) first.lr_milestones.push_back(m);
  train(part, d, first);
  TrainState resumed = to_train_state(decode_checkpoint(encode_checkpoint(make_checkpoint(part))));
  train(resumed, d, c);
  CHECK(resumed.loss_curve == full.loss_curve);
  CHECK(resumed.model.parameters == full.model.parameters);
  CHECK(resumed.momentum == full.momentum);
}

TEST_CASE("divergence rolls back to the last finite epoch") {
  const Dataset d = synth_dataset(SynthKind::gaussian_blobs, 60, 4);
  TrainState s = start_training(make_preset("mlp", {2, 1, 1}, 3, 1));
  TrainConfig c = quick_config(2);
  train(s, d, c);
  const TrainState good = s;
  c.epochs = 6;
  c.lr_milestones.clear();
  c.lr_initial = 1e200;
  c.weight_decay = 1.0;
  const TrainOutcome r = train(s, d, c);
  CHECK(r.status == TrainStatus::diverged);
  CHECK(r.failed_epoch == s.epoch);
  CHECK(s.model.parameters.at("L000.weight").all_finite());
  if (r.failed_epoch == 2) CHECK(s.model.parameters == good.model.parameters);
}

TEST_CASE("shift-mirror augmentation keeps training deterministic") {
  const Dataset d = synth_dataset(SynthKind::pattern_images, 40, 4);
  auto run = [&] {
    TrainState s = start_training(testing::small_cnn({3, 32, 32}, 10, {4}, 3));
    TrainConfig c = quick_config(1);
    c.augmentation = Augmentation::shift_mirror;
    train(s, d, c);
    return s.model.parameters;
  };
  CHECK(run() == run());
}
