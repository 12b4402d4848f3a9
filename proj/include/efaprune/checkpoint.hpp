#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efaprune/model.hpp"
#include "efaprune/train.hpp"

namespace efaprune {

constexpr std::uint32_t kCheckpointVersion = 1;

// Container layout, all integers little-endian:
//   "EFAPRUNE" | u32 version | u64 metadata length | metadata (canonical JSON)
//   | raw f64 payloads in the order the metadata declares them.
// The metadata lists every tensor with its group, shape and CRC32.
struct Checkpoint {
  Architecture architecture;
  ParamStore parameters;
  ParamStore buffers;
  ParamStore momentum;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::vector<double> loss_curve;
  std::vector<double> train_accuracy;
};

Checkpoint make_checkpoint(const TrainState& state);
TrainState to_train_state(const Checkpoint& cp);

std::string encode_checkpoint(const Checkpoint& cp);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

/// Atomic: written to a temp file and renamed into place.
void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace efaprune
