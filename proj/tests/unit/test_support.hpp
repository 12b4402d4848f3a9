#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "efaprune/error.hpp"
#include "efaprune/model.hpp"
#include "efaprune/tensor.hpp"

namespace testing {

inline efaprune::Tensor random_tensor(efaprune::Shape shape, std::uint64_t seed, double scale = 1.0) {
  efaprune::Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline efaprune::Tensor random_symmetric(std::size_t n, std::uint64_t seed) {
  efaprune::Tensor a = random_tensor({n, n}, seed);
  efaprune::Tensor s({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
  return s;
}

inline double max_abs_diff(const efaprune::Tensor& a, const efaprune::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename F>
efaprune::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const efaprune::Error& e) {
    return e.code();
  }
  return static_cast<efaprune::ErrorCode>(0);
}

template <typename F>
std::string error_message_of(F&& f) {
  try {
    f();
  } catch (const efaprune::Error& e) {
    return e.what();
  }
  return {};
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("efaprune_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small plain CNN: conv-bn-relu blocks (no conv bias) and a linear head.
inline efaprune::ModelSpec small_cnn(efaprune::InputShape input, std::size_t classes,
                                     const std::vector<std::size_t>& widths, std::uint64_t seed) {
  using namespace efaprune;
  std::vector<LayerSpec> layers;
  for (std::size_t w : widths) {
    layers.push_back(conv(w, 3, 1, 1));
    layers.push_back(batchnorm());
    layers.push_back(relu());
  }
  layers.push_back(avgpool(0));
  layers.push_back(flatten());
  layers.push_back(linear(classes));
  layers.push_back(softmax_xent());
  return build_model(std::move(layers), input, classes, seed);
}

}  // namespace testing
