#include "efaprune/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "efaprune/error.hpp"

namespace efaprune {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  require(offset + 4 <= bytes.size(), ErrorCode::truncated,
          path + ": truncated header (need " + std::to_string(offset + 4) + " bytes, file has " +
              std::to_string(bytes.size()) + ")");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_atomic(const std::string& path, const std::vector<char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::io, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::io, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::size_t label_classes(const std::vector<int>& labels) {
  int max_label = 0;
  for (int y : labels) max_label = std::max(max_label, y);
  return static_cast<std::size_t>(max_label) + 1;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::calibration: return "calibration";
  }
  return "?";
}

void validate(const Dataset& d) {
  require(d.images.rank() == 4, ErrorCode::shape_mismatch, "dataset images must be <n,c,h,w>");
  require(d.labels.size() == d.images.dim(0), ErrorCode::count_mismatch,
          std::to_string(d.images.dim(0)) + " images but " + std::to_string(d.labels.size()) + " labels");
  require(d.size() >= 1, ErrorCode::invalid_argument, "dataset is empty");
  for (int y : d.labels)
    require(y >= 0 && static_cast<std::size_t>(y) < d.class_count, ErrorCode::invalid_argument,
            "label " + std::to_string(y) + " outside [0," + std::to_string(d.class_count) + ")");
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices, Split split) {
  Dataset out;
  out.images = batch_images(d, indices);
  out.labels = batch_labels(d, indices);
  out.class_count = d.class_count;
  out.split = split;
  return out;
}

Dataset head(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, d.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(d, idx, d.split);
}

Tensor batch_images(const Dataset& d, const std::vector<std::size_t>& indices) {
  require(!indices.empty(), ErrorCode::invalid_argument, "empty batch");
  const std::size_t per = d.images.size() / d.images.dim(0);
  Tensor t({indices.size(), d.images.dim(1), d.images.dim(2), d.images.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < d.size(), ErrorCode::invalid_argument, "sample index out of range");
    std::copy_n(d.images.data() + indices[i] * per, per, t.data() + i * per);
  }
  return t;
}

std::vector<int> batch_labels(const Dataset& d, const std::vector<std::size_t>& indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = d.labels.at(indices[i]);
  return out;
}

Dataset calibration_split(const Dataset& train, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::invalid_argument, "calibration fraction must be in (0,1]");
  const std::size_t n = train.size();
  const std::size_t take = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed ^ 0xca11b7a7e5eedULL);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  std::sort(idx.begin(), idx.end());
  return subset(train, idx, Split::calibration);
}

Tensor load_idx_images(const std::string& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  require(magic == kIdxImagesMagic, ErrorCode::bad_magic,
          path + ": bad IDX image magic at offset 0 (expected 0x00000803)");
  const std::size_t n = read_be32(bytes, 4, path);
  const std::size_t rows = read_be32(bytes, 8, path);
  const std::size_t cols = read_be32(bytes, 12, path);
  require(n > 0 && rows > 0 && cols > 0, ErrorCode::invalid_argument, path + ": zero IDX dimension");
  const std::size_t payload = n * rows * cols;
  require(bytes.size() >= 16 + payload, ErrorCode::truncated,
          path + ": truncated payload (" + std::to_string(bytes.size() - 16) + " of " + std::to_string(payload) +
              " bytes)");
  Tensor t({n, 1, rows, cols});
  for (std::size_t i = 0; i < payload; ++i) t[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  return t;
}

std::vector<int> load_idx_labels(const std::string& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  require(magic == kIdxLabelsMagic, ErrorCode::bad_magic,
          path + ": bad IDX label magic at offset 0 (expected 0x00000801)");
  const std::size_t n = read_be32(bytes, 4, path);
  require(bytes.size() >= 8 + n, ErrorCode::truncated,
          path + ": truncated payload (" + std::to_string(bytes.size() - 8) + " of " + std::to_string(n) + " bytes)");
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = bytes[8 + i];
  return labels;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split) {
  Dataset d;
  d.images = load_idx_images(images_path);
  d.labels = load_idx_labels(labels_path);
  require(d.labels.size() == d.images.dim(0), ErrorCode::count_mismatch,
          images_path + " holds " + std::to_string(d.images.dim(0)) + " images but " + labels_path + " holds " +
              std::to_string(d.labels.size()) + " labels");
  d.class_count = std::max<std::size_t>(10, label_classes(d.labels));
  d.split = split;
  return d;
}

void write_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
  require(d.images.dim(1) == 1, ErrorCode::invalid_argument, "IDX images must be single-channel");
  {
    std::ofstream out(images_path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + images_path);
    put_be32(out, kIdxImagesMagic);
    put_be32(out, static_cast<std::uint32_t>(d.size()));
    put_be32(out, static_cast<std::uint32_t>(d.height()));
    put_be32(out, static_cast<std::uint32_t>(d.width()));
    for (double v : d.images.values()) out.put(static_cast<char>(to_byte(v)));
  }
  std::ofstream out(labels_path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + labels_path);
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(d.size()));
  for (int y : d.labels) out.put(static_cast<char>(y));
}

Dataset load_cifar10_file(const std::string& path, Split split, std::size_t max_records) {
  const auto bytes = read_file(path);
  require(!bytes.empty() && bytes.size() % kCifarRecord == 0, ErrorCode::truncated,
          path + ": size " + std::to_string(bytes.size()) + " is not a multiple of the 3073-byte record");
  std::size_t n = bytes.size() / kCifarRecord;
  if (max_records > 0) n = std::min(n, max_records);
  Dataset d;
  d.images = Tensor({n, 3, kCifarSide, kCifarSide});
  d.labels.resize(n);
  d.class_count = 10;
  d.split = split;
  constexpr std::size_t pixels = 3 * kCifarSide * kCifarSide;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kCifarRecord;
    require(rec[0] < 10, ErrorCode::invalid_argument,
            path + ": record " + std::to_string(i) + " has label " + std::to_string(rec[0]) + " outside [0,10)");
    d.labels[i] = rec[0];
    for (std::size_t p = 0; p < pixels; ++p) d.images[i * pixels + p] = static_cast<double>(rec[1 + p]) / 255.0;
  }
  return d;
}

Dataset load_cifar10_binary(const std::string& dir, Split split, std::size_t max_records) {
  std::vector<std::string> files;
  if (split == Split::test) {
    files.push_back("test_batch.bin");
  } else {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  }
  Dataset out;
  out.class_count = 10;
  out.split = split;
  std::vector<double> pixels;
  for (const auto& f : files) {
    const auto path = (std::filesystem::path(dir) / f).string();
    if (!std::filesystem::exists(path)) continue;
    const std::size_t remaining = max_records == 0 ? 0 : max_records - out.labels.size();
    Dataset part = load_cifar10_file(path, split, remaining);
    pixels.insert(pixels.end(), part.images.values().begin(), part.images.values().end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
    if (max_records > 0 && out.labels.size() >= max_records) break;
  }
  require(!out.labels.empty(), ErrorCode::io, "no CIFAR-10 " + std::string(split_name(split)) + " batches in " + dir);
  out.images = Tensor({out.labels.size(), 3, kCifarSide, kCifarSide}, std::move(pixels));
  return out;
}

void write_cifar10_file(const Dataset& d, const std::string& path) {
  require(d.channels() == 3 && d.height() == kCifarSide && d.width() == kCifarSide, ErrorCode::invalid_argument,
          "CIFAR-10 records are 3x32x32");
  std::vector<char> bytes;
  bytes.reserve(d.size() * kCifarRecord);
  constexpr std::size_t pixels = 3 * kCifarSide * kCifarSide;
  for (std::size_t i = 0; i < d.size(); ++i) {
    bytes.push_back(static_cast<char>(d.labels[i]));
    for (std::size_t p = 0; p < pixels; ++p) bytes.push_back(static_cast<char>(to_byte(d.images[i * pixels + p])));
  }
  write_atomic(path, bytes);
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "gaussian-blobs") return SynthKind::gaussian_blobs;
  if (name == "separable-2d") return SynthKind::separable_2d;
  if (name == "pattern-images") return SynthKind::pattern_images;
  fail(ErrorCode::invalid_argument, "unknown synthetic dataset '" + name + "'");
}

Dataset synth_dataset(SynthKind kind, std::size_t n, std::uint64_t seed, std::size_t classes) {
  require(n >= 2, ErrorCode::invalid_argument, "synthetic dataset needs n >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.labels.resize(n);
  switch (kind) {
    case SynthKind::separable_2d: {
      // Classes split by x + y = 1 with a 0.1 gap on either side.
      d.class_count = 2;
      d.images = Tensor({n, 2, 1, 1});
      for (std::size_t i = 0; i < n; ++i) {
        double x, y;
        do {
          x = unit(rng);
          y = unit(rng);
        } while (std::abs(x + y - 1.0) < 0.1);
        d.images[2 * i] = x;
        d.images[2 * i + 1] = y;
        d.labels[i] = x + y > 1.0 ? 1 : 0;
      }
      break;
    }
    case SynthKind::gaussian_blobs: {
      d.class_count = classes == 0 ? 3 : classes;
      d.images = Tensor({n, 2, 1, 1});
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = i % d.class_count;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(d.class_count);
        const double mx = 0.5 + 0.35 * std::cos(angle), my = 0.5 + 0.35 * std::sin(angle);
        d.images[2 * i] = std::clamp(mx + 0.03 * gauss(rng), 0.0, 1.0);
        d.images[2 * i + 1] = std::clamp(my + 0.03 * gauss(rng), 0.0, 1.0);
        d.labels[i] = static_cast<int>(k);
      }
      break;
    }
    case SynthKind::pattern_images: {
      // Oriented gratings: 5 orientations x 2 spatial frequencies, per-class
      // colour balance, random phase per sample and additive noise.
      d.class_count = classes == 0 ? 10 : std::min<std::size_t>(classes, 10);
      constexpr std::size_t side = 32;
      d.images = Tensor({n, 3, side, side});
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = static_cast<std::size_t>(rng() % d.class_count);
        const double theta = std::numbers::pi * static_cast<double>(k % 5) / 5.0;
        const double freq = (k / 5 == 0 ? 2.0 : 4.5) / static_cast<double>(side);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const double tint[3] = {0.6 + 0.4 * std::cos(static_cast<double>(k)),
                                0.6 + 0.4 * std::sin(static_cast<double>(k)), 0.7};
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t r = 0; r < side; ++r)
            for (std::size_t q = 0; q < side; ++q) {
              const double u = static_cast<double>(q) * std::cos(theta) + static_cast<double>(r) * std::sin(theta);
              const double v = 0.5 + 0.35 * tint[c] * std::sin(2.0 * std::numbers::pi * freq * u + phase) +
                               0.12 * gauss(rng);
              d.images.at(i, c, r, q) = std::clamp(v, 0.0, 1.0);
            }
        d.labels[i] = static_cast<int>(k);
      }
      break;
    }
  }
  return d;
}

}  // namespace efaprune
