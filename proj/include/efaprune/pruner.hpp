#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "efaprune/dataset.hpp"
#include "efaprune/efa.hpp"
#include "efaprune/entropy.hpp"
#include "efaprune/model.hpp"

namespace efaprune {

constexpr std::size_t kDefaultMinFilters = 5;

/// Model-independent input to the selection loop: one entry per prunable
/// layer in model order.
struct PlanLayerInput {
  std::string layer;
  std::vector<double> info;
  /// Cross-entropy against the predecessor; absent sorts last as a candidate.
  std::optional<double> cross_entropy;
  /// Whole-layer removal allowed (false for the first and last conv).
  bool removable = true;
};

struct PlanInput {
  std::vector<PlanLayerInput> layers;
  double filter_pruning_ratio = 0.0;
  std::size_t min_filters = kDefaultMinFilters;
  double variance_rate = 0.0;
};

struct PlanLayer {
  std::string layer;
  std::size_t total = 0;
  /// Kept filter indices, ascending. Empty when the layer is removed.
  std::vector<std::size_t> kept;
  bool removed = false;
};

enum class TraceAction { remove_layer, force_keep, accept, infeasible };

const char* trace_action_name(TraceAction a);
TraceAction parse_trace_action(const std::string& name);

struct TraceEntry {
  std::size_t iteration = 0;
  /// Info value of the N-th selected filter (NaN when nothing is selected).
  double threshold = 0.0;
  TraceAction action = TraceAction::accept;
  /// Layer removed or force-kept; empty for accept/infeasible.
  std::string layer;
  std::optional<double> cross_entropy;
  /// Layers under the floor at this iteration.
  std::vector<std::string> under_threshold;
};

struct PruningPlan {
  std::size_t target_keep_count = 0;
  std::size_t total_filters = 0;
  double filter_pruning_ratio = 0.0;
  double variance_rate = 0.0;
  std::size_t min_filters = kDefaultMinFilters;
  bool feasible = true;
  std::string diagnostics;
  std::vector<PlanLayer> layers;
  std::vector<std::string> removed_layers;
  std::vector<TraceEntry> threshold_trace;

  std::size_t kept_count() const;
  const PlanLayer* find(const std::string& layer) const;
};

/// Hierarchical layer-then-filter selection. N = round((1 - ratio) * total)
/// is fixed up front. Each iteration selects the global top-N filters by info
/// (ties: lower layer index, then lower filter index) among layers not yet
/// removed. If a layer keeps fewer than min(min_filters, its size) filters,
/// the removable such layer with the lowest cross-entropy (ties: lower index)
/// is removed and selection repeats. Starving layers that may not be removed
/// get their top filters reserved instead.
PruningPlan build_plan(const PlanInput& input);

PlanInput plan_input(const ModelSpec& model, const EntropyReport& entropy, double filter_pruning_ratio,
                     std::size_t min_filters = kDefaultMinFilters);

PruningPlan build_plan(const ModelSpec& model, const EFAReport& efa, const EntropyReport& entropy,
                       std::size_t min_filters = kDefaultMinFilters);

/// Keeps every filter of every prunable layer.
PruningPlan identity_plan(const ModelSpec& model);

/// Structural surgery: prunable convs keep only their planned filters,
/// removed convs are excised together with the BatchNorm and ReLU right
/// after them (their stride moves to the next conv), downstream channel
/// counts are re-inferred and all parameters are freshly initialised.
ModelSpec apply_plan(const ModelSpec& model, const PruningPlan& plan, std::uint64_t seed);

/// Copy of `model` whose pruned filters (and their BatchNorm scale/shift)
/// are zeroed in place, leaving the architecture intact.
ModelSpec mask_plan(const ModelSpec& model, const PruningPlan& plan);

enum class PeNormalization {
  per_element,  // divide by the element count
  per_sample,   // divide by the batch size (leading extent)
};

/// Mean squared discrepancy ||pruned - original||_F^2 / n. With
/// zero_fill, a pruned tensor with fewer channels is compared as if its
/// missing channels were zero, using `kept_channels` to place the survivors.
double layer_pruning_error(const Tensor& original, const Tensor& pruned,
                           PeNormalization norm = PeNormalization::per_element);
double layer_pruning_error_zero_fill(const Tensor& original, const Tensor& pruned,
                                     const std::vector<std::size_t>& kept_channels,
                                     PeNormalization norm = PeNormalization::per_element);

/// sum_k (prod_{l>k} ||W_l||_F) sqrt(dPE_k). `weight_norms[j]` belongs to
/// weight layer j+1, so weight_norms.size() == pe_deltas.size() - 1.
double accumulated_error_bound(const std::vector<double>& weight_norms, const std::vector<double>& pe_deltas);

struct ErrorReport {
  /// Weight layers (conv and linear) in model order.
  std::vector<std::string> layers;
  std::vector<double> pe;
  std::vector<double> pe_delta;
  /// ||W_hat_l||_F for weight layers 2..L.
  std::vector<double> weight_norms;
  double bound = 0.0;
  double measured = 0.0;
  PeNormalization normalization = PeNormalization::per_sample;
};

/// Masks the plan into the model layer by layer on `batch` (eval mode) and
/// records each weight layer's output error, the incremental error each
/// layer adds given its already-perturbed input, the masked weight norms,
/// the accumulated bound and the measured error of the network output.
ErrorReport error_report(const ModelSpec& model, const PruningPlan& plan, const Tensor& batch,
                         PeNormalization norm = PeNormalization::per_sample);

struct ComparisonLayer {
  std::string layer;
  std::size_t total = 0;
  std::size_t baseline_kept = 0;
  std::size_t hierarchical_kept = 0;
  bool hierarchical_removed = false;
};

struct ComparisonReport {
  double pruning_ratio = 0.0;
  std::size_t budget = 0;
  std::size_t min_filters = kDefaultMinFilters;
  /// "bn-scale" when the model has BatchNorm after every prunable conv, else "entropy".
  std::string baseline_criterion;
  std::vector<ComparisonLayer> layers;
  /// Layers left with 0 < count < min(min_filters, total).
  std::vector<std::string> baseline_starved;
  std::vector<std::string> hierarchical_starved;
  bool hierarchical_feasible = true;
};

/// Flat global threshold (BatchNorm |gamma|, falling back to filter entropy)
/// versus the hierarchical plan at the same kept-filter budget.
ComparisonReport overpruning_comparison(const ModelSpec& model, const EntropyReport& entropy, double pruning_ratio,
                                        std::size_t min_filters = kDefaultMinFilters);

}  // namespace efaprune
