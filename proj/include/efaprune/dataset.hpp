#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efaprune/tensor.hpp"

namespace efaprune {

enum class Split { train, test, calibration };

const char* split_name(Split s);

/// Images <n,c,h,w> scaled to [0,1] with integer labels in [0, class_count).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t class_count = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

void validate(const Dataset& d);

/// Copies the listed samples into a new dataset (order preserved).
Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices, Split split);
Dataset head(const Dataset& d, std::size_t n);

/// Contiguous batch [begin, begin+count) as an image tensor plus labels.
Tensor batch_images(const Dataset& d, const std::vector<std::size_t>& indices);
std::vector<int> batch_labels(const Dataset& d, const std::vector<std::size_t>& indices);

/// Seeded subsample of `fraction` of the training samples (at least one).
Dataset calibration_split(const Dataset& train, double fraction = 0.1, std::uint64_t seed = 0);

// IDX (MNIST-style) container. Images magic 0x00000803, labels 0x00000801,
// big-endian u32 dimensions, pixel bytes scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split = Split::train);
Tensor load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);
void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records (label byte + 3x32x32 planes).
// Loads data_batch_1..5.bin for the train split, test_batch.bin for test;
// missing batches are skipped. max_records == 0 means no limit.
Dataset load_cifar10_binary(const std::string& dir, Split split, std::size_t max_records = 0);
Dataset load_cifar10_file(const std::string& path, Split split, std::size_t max_records = 0);
void write_cifar10_file(const Dataset& d, const std::string& path);

enum class SynthKind {
  gaussian_blobs,  // <n,2,1,1> points around well-separated class means
  separable_2d,    // <n,2,1,1> two classes split by a line with a margin
  pattern_images,  // <n,3,32,32> class-specific oriented textures plus noise
};

SynthKind parse_synth_kind(const std::string& name);

Dataset synth_dataset(SynthKind kind, std::size_t n, std::uint64_t seed, std::size_t classes = 0);

}  // namespace efaprune
