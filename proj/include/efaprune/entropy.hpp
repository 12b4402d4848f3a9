#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efaprune/model.hpp"

namespace efaprune {

constexpr std::size_t kDefaultBins = 1000;

struct WeightHistogram {
  std::size_t bin_count = 0;
  /// bin_count + 1 ascending edges; the last bin is closed on the right.
  std::vector<double> bin_edges;
  std::vector<double> probabilities;
};

/// Equal-width edges over [lo, hi]; a zero-width range is widened to
/// [lo - 0.5, lo + 0.5] so a constant vector lands in the middle bin.
std::vector<double> uniform_edges(double lo, double hi, std::size_t m);

/// Histogram of `weights` on the given edges, or on edges spanning their own
/// [min, max] when none are supplied. Values outside the edges fall into the
/// end bins.
WeightHistogram weight_histogram(std::span<const double> weights, std::size_t m,
                                 const std::vector<double>* edges = nullptr);

/// -sum p ln p with 0 ln 0 = 0.
double histogram_entropy(const WeightHistogram& h);

double filter_entropy(std::span<const double> filter_weights, std::size_t m = kDefaultBins);

enum class WeightNorm { l1, l2, max };

const char* weight_norm_name(WeightNorm n);
WeightNorm parse_weight_norm(const std::string& name);

constexpr double kCrossEntropySmoothing = 1e-12;

/// -sum_j p_j^L ln(p_j^{L-1} + 1e-12) with both layers scaled to unit norm
/// and binned on shared edges spanning the union of their ranges.
double layer_cross_entropy(std::span<const double> layer_l, std::span<const double> layer_lm1,
                           std::size_t m = kDefaultBins, WeightNorm norm = WeightNorm::l2);

/// Entropy of `layer_l` on the same shared edges used by layer_cross_entropy.
double shared_bin_entropy(std::span<const double> layer_l, std::span<const double> layer_lm1,
                          std::size_t m = kDefaultBins, WeightNorm norm = WeightNorm::l2);

struct LayerEntropy {
  std::string layer;
  /// Conv layer immediately before this one in model order; empty for the first.
  std::string predecessor;
  std::vector<double> filter_entropies;
  /// Against the predecessor; absent for the first conv layer.
  std::optional<double> cross_entropy;
};

struct EntropyReport {
  std::size_t bin_count = kDefaultBins;
  WeightNorm norm = WeightNorm::l2;
  /// One entry per prunable conv layer, in model order.
  std::vector<LayerEntropy> layers;
};

EntropyReport entropy_report(const ModelSpec& model, std::size_t m = kDefaultBins, WeightNorm norm = WeightNorm::l2);

}  // namespace efaprune
