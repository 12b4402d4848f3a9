#include "efaprune/entropy.hpp"

#include <algorithm>
#include <cmath>

#include "efaprune/error.hpp"

namespace efaprune {

namespace {

std::vector<double> normalized(std::span<const double> w, WeightNorm norm) {
  double s = 0.0;
  for (double v : w) {
    switch (norm) {
      case WeightNorm::l1: s += std::abs(v); break;
      case WeightNorm::l2: s += v * v; break;
      case WeightNorm::max: s = std::max(s, std::abs(v)); break;
    }
  }
  if (norm == WeightNorm::l2) s = std::sqrt(s);
  std::vector<double> out(w.begin(), w.end());
  if (s > 0.0)
    for (double& v : out) v /= s;
  return out;
}

std::vector<double> shared_edges(const std::vector<double>& a, const std::vector<double>& b, std::size_t m) {
  const auto [amin, amax] = std::minmax_element(a.begin(), a.end());
  const auto [bmin, bmax] = std::minmax_element(b.begin(), b.end());
  return uniform_edges(std::min(*amin, *bmin), std::max(*amax, *bmax), m);
}

}  // namespace

std::vector<double> uniform_edges(double lo, double hi, std::size_t m) {
  require(m >= 2, ErrorCode::invalid_argument, "histogram needs at least 2 bins");
  require(std::isfinite(lo) && std::isfinite(hi) && lo <= hi, ErrorCode::invalid_argument,
          "histogram range must be finite and ordered");
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(m + 1);
  for (std::size_t j = 0; j <= m; ++j)
    edges[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(m);
  edges.back() = hi;
  return edges;
}

WeightHistogram weight_histogram(std::span<const double> weights, std::size_t m, const std::vector<double>* edges) {
  require(!weights.empty(), ErrorCode::invalid_argument, "cannot histogram an empty weight set");
  require(m >= 2, ErrorCode::invalid_argument, "histogram needs at least 2 bins");
  for (double v : weights)
    require(std::isfinite(v), ErrorCode::numerical, "non-finite weight in histogram input");
  WeightHistogram h;
  h.bin_count = m;
  if (edges) {
    require(edges->size() == m + 1, ErrorCode::invalid_argument, "edge count must be bins + 1");
    for (std::size_t j = 1; j <= m; ++j)
      require((*edges)[j] > (*edges)[j - 1], ErrorCode::invalid_argument, "bin edges must strictly ascend");
    h.bin_edges = *edges;
  } else {
    const auto [lo, hi] = std::minmax_element(weights.begin(), weights.end());
    h.bin_edges = uniform_edges(*lo, *hi, m);
  }
  std::vector<std::size_t> counts(m, 0);
  for (double v : weights) {
    const auto it = std::upper_bound(h.bin_edges.begin(), h.bin_edges.end(), v);
    const long bin = static_cast<long>(it - h.bin_edges.begin()) - 1;
    ++counts[static_cast<std::size_t>(std::clamp<long>(bin, 0, static_cast<long>(m) - 1))];
  }
  h.probabilities.resize(m);
  for (std::size_t j = 0; j < m; ++j)
    h.probabilities[j] = static_cast<double>(counts[j]) / static_cast<double>(weights.size());
  return h;
}

double histogram_entropy(const WeightHistogram& h) {
  double e = 0.0;
  for (double p : h.probabilities)
    if (p > 0.0) e -= p * std::log(p);
  return std::max(e, 0.0);
}

double filter_entropy(std::span<const double> filter_weights, std::size_t m) {
  return histogram_entropy(weight_histogram(filter_weights, m));
}

const char* weight_norm_name(WeightNorm n) {
  switch (n) {
    case WeightNorm::l1: return "l1";
    case WeightNorm::l2: return "l2";
    case WeightNorm::max: return "max";
  }
  return "?";
}

WeightNorm parse_weight_norm(const std::string& name) {
  if (name == "l1") return WeightNorm::l1;
  if (name == "l2") return WeightNorm::l2;
  if (name == "max") return WeightNorm::max;
  fail(ErrorCode::invalid_argument, "unknown weight norm '" + name + "'");
}

double layer_cross_entropy(std::span<const double> layer_l, std::span<const double> layer_lm1, std::size_t m,
                           WeightNorm norm) {
  require(!layer_l.empty() && !layer_lm1.empty(), ErrorCode::invalid_argument,
          "cross-entropy needs two non-empty layers");
  const auto a = normalized(layer_l, norm);
  const auto b = normalized(layer_lm1, norm);
  const auto edges = shared_edges(a, b, m);
  const WeightHistogram pa = weight_histogram(a, m, &edges);
  const WeightHistogram pb = weight_histogram(b, m, &edges);
  double ce = 0.0;
  for (std::size_t j = 0; j < m; ++j)
    if (pa.probabilities[j] > 0.0) ce -= pa.probabilities[j] * std::log(pb.probabilities[j] + kCrossEntropySmoothing);
  return std::max(ce, 0.0);
}

double shared_bin_entropy(std::span<const double> layer_l, std::span<const double> layer_lm1, std::size_t m,
                          WeightNorm norm) {
  const auto a = normalized(layer_l, norm);
  const auto b = normalized(layer_lm1, norm);
  const auto edges = shared_edges(a, b, m);
  return histogram_entropy(weight_histogram(a, m, &edges));
}

EntropyReport entropy_report(const ModelSpec& model, std::size_t m, WeightNorm norm) {
  EntropyReport rep;
  rep.bin_count = m;
  rep.norm = norm;
  const LayerSpec* previous = nullptr;
  for (const LayerSpec* l : conv_layers(model.layers)) {
    if (l->prunable) {
      const Tensor& w = model.parameters.at(l->name + ".weight");
      LayerEntropy row;
      row.layer = l->name;
      const std::size_t per = w.size() / w.dim(0);
      for (std::size_t j = 0; j < w.dim(0); ++j)
        row.filter_entropies.push_back(filter_entropy(w.values().subspan(j * per, per), m));
      if (previous) {
        row.predecessor = previous->name;
        row.cross_entropy = layer_cross_entropy(w.values(), model.parameters.at(previous->name + ".weight").values(),
                                                m, norm);
      }
      rep.layers.push_back(std::move(row));
    }
    previous = l;
  }
  return rep;
}

}  // namespace efaprune
