#include "efaprune/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "efaprune/engine.hpp"
#include "efaprune/error.hpp"
#include "efaprune/linalg.hpp"

namespace efaprune {

namespace {

struct Candidate {
  double info;
  std::size_t layer;
  std::size_t filter;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.info != b.info) return a.info > b.info;
  if (a.layer != b.layer) return a.layer < b.layer;
  return a.filter < b.filter;
}

std::vector<Candidate> ranked(const std::vector<std::vector<double>>& scores) {
  std::vector<Candidate> out;
  for (std::size_t l = 0; l < scores.size(); ++l)
    for (std::size_t f = 0; f < scores[l].size(); ++f) out.push_back({scores[l][f], l, f});
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

// Location of a layer inside the (possibly nested) layer lists.
struct Site {
  std::vector<LayerSpec>* list = nullptr;
  std::size_t index = 0;
};

bool find_site(std::vector<LayerSpec>& layers, const std::string& name, Site& site) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) {
      site = {&layers, i};
      return true;
    }
    if (layers[i].kind == LayerKind::residual_block && find_site(layers[i].block_members, name, site)) return true;
  }
  return false;
}

// A conv can be excised when any stride it carries can move to a later conv
// of the same layer list.
bool excisable(const ModelSpec& model, const std::string& name) {
  auto layers = model.layers;
  Site site;
  if (!find_site(layers, name, site)) return false;
  const LayerSpec& l = (*site.list)[site.index];
  if (l.stride == 1) return true;
  for (std::size_t i = site.index + 1; i < site.list->size(); ++i)
    if ((*site.list)[i].kind == LayerKind::conv) return true;
  return false;
}

void zero_filters(ModelSpec& model, const std::string& layer, const std::vector<bool>& keep) {
  Site site;
  require(find_site(model.layers, layer, site), ErrorCode::invalid_argument, "plan names unknown layer " + layer);
  Tensor& w = model.parameters.at(layer + ".weight");
  const std::size_t per = w.size() / w.dim(0);
  Tensor* bias = model.parameters.count(layer + ".bias") ? &model.parameters.at(layer + ".bias") : nullptr;
  const std::vector<LayerSpec>& list = *site.list;
  const bool has_bn = site.index + 1 < list.size() && list[site.index + 1].kind == LayerKind::batchnorm;
  for (std::size_t j = 0; j < w.dim(0); ++j) {
    if (keep[j]) continue;
    std::fill_n(w.data() + j * per, per, 0.0);
    if (bias) (*bias)[j] = 0.0;
    if (has_bn) {
      const std::string bn = list[site.index + 1].name;
      model.parameters.at(bn + ".gamma")[j] = 0.0;
      model.parameters.at(bn + ".beta")[j] = 0.0;
    }
  }
}

std::vector<bool> keep_mask(const PlanLayer& pl) {
  std::vector<bool> keep(pl.total, false);
  if (!pl.removed)
    for (std::size_t j : pl.kept) keep.at(j) = true;
  return keep;
}

void collect_weight_layers(const std::vector<LayerSpec>& layers, std::vector<const LayerSpec*>& out) {
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::linear) out.push_back(&l);
    if (l.kind == LayerKind::residual_block) collect_weight_layers(l.block_members, out);
  }
}

void collect_weight_outputs(const std::vector<LayerSpec>& layers, const std::vector<LayerTrace>& traces,
                            std::map<std::string, Tensor>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::conv || layers[i].kind == LayerKind::linear)
      out[layers[i].name] = traces[i].output;
    if (layers[i].kind == LayerKind::residual_block)
      collect_weight_outputs(layers[i].block_members, traces[i].members, out);
  }
}

std::map<std::string, Tensor> weight_outputs(const ModelSpec& model, const Tensor& batch) {
  std::vector<int> labels(batch.dim(0), 0);
  ForwardResult fwd = forward(model, batch, labels, Mode::eval);
  std::map<std::string, Tensor> out;
  collect_weight_outputs(model.layers, fwd.layers, out);
  return out;
}

std::vector<LayerSpec> rewrite(const std::vector<LayerSpec>& layers, const std::map<std::string, const PlanLayer*>& plan,
                               std::size_t& applied) {
  std::vector<LayerSpec> out;
  std::size_t pending_stride = 1;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    LayerSpec l = layers[i];
    if (l.kind == LayerKind::conv) {
      auto it = plan.find(l.name);
      if (it != plan.end()) {
        ++applied;
        require(l.prunable, ErrorCode::invalid_argument, "plan prunes non-prunable layer " + l.name);
        require(it->second->total == l.out_channels, ErrorCode::shape_mismatch,
                "plan expects " + std::to_string(it->second->total) + " filters in " + l.name + ", model has " +
                    std::to_string(l.out_channels));
        if (it->second->removed) {
          pending_stride *= l.stride;
          if (i + 1 < layers.size() && layers[i + 1].kind == LayerKind::batchnorm) ++i;
          if (i + 1 < layers.size() && layers[i + 1].kind == LayerKind::relu) ++i;
          continue;
        }
        require(!it->second->kept.empty(), ErrorCode::invalid_argument, "plan keeps no filters in " + l.name);
        l.out_channels = it->second->kept.size();
      }
      l.stride *= pending_stride;
      pending_stride = 1;
    }
    if (l.kind == LayerKind::residual_block) l.block_members = rewrite(l.block_members, plan, applied);
    out.push_back(std::move(l));
  }
  require(pending_stride == 1, ErrorCode::infeasible, "removed strided conv has no successor conv to take its stride");
  return out;
}

}  // namespace

const char* trace_action_name(TraceAction a) {
  switch (a) {
    case TraceAction::remove_layer: return "remove_layer";
    case TraceAction::force_keep: return "force_keep";
    case TraceAction::accept: return "accept";
    case TraceAction::infeasible: return "infeasible";
  }
  return "?";
}

TraceAction parse_trace_action(const std::string& name) {
  for (TraceAction a : {TraceAction::remove_layer, TraceAction::force_keep, TraceAction::accept, TraceAction::infeasible})
    if (name == trace_action_name(a)) return a;
  fail(ErrorCode::invalid_argument, "unknown trace action '" + name + "'");
}

std::size_t PruningPlan::kept_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kept.size();
  return n;
}

const PlanLayer* PruningPlan::find(const std::string& layer) const {
  for (const auto& l : layers)
    if (l.layer == layer) return &l;
  return nullptr;
}

PruningPlan build_plan(const PlanInput& in) {
  require(!in.layers.empty(), ErrorCode::invalid_argument, "no prunable layers");
  require(in.min_filters >= 1, ErrorCode::invalid_argument, "min_filters must be at least 1");
  require(in.filter_pruning_ratio >= 0.0 && in.filter_pruning_ratio <= 1.0, ErrorCode::invalid_argument,
          "filter pruning ratio must be in [0,1]");
  const std::size_t L = in.layers.size();
  std::vector<std::vector<double>> scores(L);
  std::size_t total = 0;
  for (std::size_t l = 0; l < L; ++l) {
    require(!in.layers[l].info.empty(), ErrorCode::invalid_argument, "layer " + in.layers[l].layer + " has no filters");
    for (double v : in.layers[l].info)
      require(std::isfinite(v), ErrorCode::numerical, "non-finite info score in " + in.layers[l].layer);
    scores[l] = in.layers[l].info;
    total += scores[l].size();
  }
  const auto order = ranked(scores);

  PruningPlan plan;
  plan.total_filters = total;
  plan.filter_pruning_ratio = in.filter_pruning_ratio;
  plan.variance_rate = in.variance_rate;
  plan.min_filters = in.min_filters;
  const std::size_t N =
      static_cast<std::size_t>(std::llround((1.0 - in.filter_pruning_ratio) * static_cast<double>(total)));
  plan.target_keep_count = N;

  std::vector<bool> removed(L, false), forced(L, false);
  std::vector<std::vector<bool>> selected;
  auto floor_of = [&](std::size_t l) { return std::min(in.min_filters, scores[l].size()); };

  for (std::size_t iter = 0;; ++iter) {
    selected.assign(L, {});
    for (std::size_t l = 0; l < L; ++l) selected[l].assign(scores[l].size(), false);
    std::size_t available = 0, reserved = 0;
    for (std::size_t l = 0; l < L; ++l) {
      if (removed[l]) continue;
      available += scores[l].size();
      if (forced[l]) reserved += floor_of(l);
    }
    TraceEntry entry;
    entry.iteration = iter;
    entry.threshold = std::numeric_limits<double>::quiet_NaN();

    // Reserved filters of protected layers first, then the global top list.
    std::vector<std::size_t> taken(L, 0);
    for (const auto& c : order)
      if (!removed[c.layer] && forced[c.layer] && taken[c.layer] < floor_of(c.layer)) {
        selected[c.layer][c.filter] = true;
        ++taken[c.layer];
      }
    const std::size_t budget = std::min(N, available);
    std::size_t count = std::min(reserved, budget);
    for (const auto& c : order) {
      if (count >= budget) break;
      if (removed[c.layer] || selected[c.layer][c.filter]) continue;
      selected[c.layer][c.filter] = true;
      ++taken[c.layer];
      ++count;
      entry.threshold = c.info;
    }

    if (N > available || reserved > N) {
      plan.feasible = false;
      plan.diagnostics = "target keep count " + std::to_string(N) + " cannot be met: " + std::to_string(available) +
                         " filters remain in surviving layers, " + std::to_string(reserved) +
                         " reserved for protected layers";
      entry.action = TraceAction::infeasible;
      plan.threshold_trace.push_back(std::move(entry));
      break;
    }

    std::vector<std::size_t> under;
    for (std::size_t l = 0; l < L; ++l)
      if (!removed[l] && taken[l] < floor_of(l)) {
        under.push_back(l);
        entry.under_threshold.push_back(in.layers[l].layer);
      }
    if (under.empty()) {
      entry.action = TraceAction::accept;
      plan.threshold_trace.push_back(std::move(entry));
      break;
    }

    std::optional<std::size_t> victim;
    double victim_ce = std::numeric_limits<double>::infinity();
    for (std::size_t l : under) {
      if (!in.layers[l].removable || forced[l]) continue;
      const double ce = in.layers[l].cross_entropy.value_or(std::numeric_limits<double>::infinity());
      if (!victim || ce < victim_ce) {
        victim = l;
        victim_ce = ce;
      }
    }
    if (victim) {
      removed[*victim] = true;
      plan.removed_layers.push_back(in.layers[*victim].layer);
      entry.action = TraceAction::remove_layer;
      entry.layer = in.layers[*victim].layer;
      entry.cross_entropy = in.layers[*victim].cross_entropy;
      plan.threshold_trace.push_back(std::move(entry));
      continue;
    }
    for (std::size_t l : under) {
      forced[l] = true;
      TraceEntry e = entry;
      e.action = TraceAction::force_keep;
      e.layer = in.layers[l].layer;
      e.cross_entropy = in.layers[l].cross_entropy;
      plan.threshold_trace.push_back(std::move(e));
    }
  }

  for (std::size_t l = 0; l < L; ++l) {
    PlanLayer pl;
    pl.layer = in.layers[l].layer;
    pl.total = scores[l].size();
    pl.removed = removed[l];
    if (!removed[l])
      for (std::size_t f = 0; f < scores[l].size(); ++f)
        if (selected[l][f]) pl.kept.push_back(f);
    plan.layers.push_back(std::move(pl));
  }
  return plan;
}

PlanInput plan_input(const ModelSpec& model, const EntropyReport& entropy, double filter_pruning_ratio,
                     std::size_t min_filters) {
  const auto prunable = prunable_layers(model);
  require(entropy.layers.size() == prunable.size(), ErrorCode::count_mismatch,
          "entropy report covers " + std::to_string(entropy.layers.size()) + " layers, model has " +
              std::to_string(prunable.size()) + " prunable layers");
  const auto convs = conv_layers(model.layers);
  require(!convs.empty(), ErrorCode::invalid_argument, "model has no conv layers");
  PlanInput in;
  in.filter_pruning_ratio = filter_pruning_ratio;
  in.min_filters = min_filters;
  for (std::size_t i = 0; i < prunable.size(); ++i) {
    const LayerSpec* l = prunable[i];
    const LayerEntropy& e = entropy.layers[i];
    require(e.layer == l->name && e.filter_entropies.size() == l->out_channels, ErrorCode::count_mismatch,
            "entropy report does not match layer " + l->name);
    PlanLayerInput pl;
    pl.layer = l->name;
    pl.info = e.filter_entropies;
    pl.cross_entropy = e.cross_entropy;
    pl.removable = l != convs.front() && l != convs.back() && excisable(model, l->name);
    in.layers.push_back(std::move(pl));
  }
  return in;
}

PruningPlan build_plan(const ModelSpec& model, const EFAReport& efa, const EntropyReport& entropy,
                       std::size_t min_filters) {
  require(efa.layers.size() == entropy.layers.size(), ErrorCode::count_mismatch,
          "EFA and entropy reports cover different layers");
  for (std::size_t i = 0; i < efa.layers.size(); ++i)
    require(efa.layers[i].layer == entropy.layers[i].layer, ErrorCode::count_mismatch,
            "EFA and entropy reports disagree on layer " + std::to_string(i));
  PlanInput in = plan_input(model, entropy, efa.filter_pruning_ratio, min_filters);
  in.variance_rate = efa.variance_rate;
  return build_plan(in);
}

PruningPlan identity_plan(const ModelSpec& model) {
  PruningPlan plan;
  plan.min_filters = kDefaultMinFilters;
  for (const LayerSpec* l : prunable_layers(model)) {
    PlanLayer pl;
    pl.layer = l->name;
    pl.total = l->out_channels;
    pl.kept.resize(pl.total);
    std::iota(pl.kept.begin(), pl.kept.end(), 0);
    plan.total_filters += pl.total;
    plan.layers.push_back(std::move(pl));
  }
  plan.target_keep_count = plan.total_filters;
  plan.threshold_trace.push_back({0, std::numeric_limits<double>::quiet_NaN(), TraceAction::accept, {}, {}, {}});
  return plan;
}

ModelSpec apply_plan(const ModelSpec& model, const PruningPlan& plan, std::uint64_t seed) {
  require(plan.feasible, ErrorCode::infeasible, "cannot apply an infeasible plan: " + plan.diagnostics);
  std::map<std::string, const PlanLayer*> by_name;
  for (const auto& pl : plan.layers) {
    require(by_name.emplace(pl.layer, &pl).second, ErrorCode::invalid_argument, "plan lists " + pl.layer + " twice");
    for (std::size_t j : pl.kept)
      require(j < pl.total, ErrorCode::invalid_argument, "plan keeps filter " + std::to_string(j) + " of " + pl.layer);
  }
  std::size_t applied = 0;
  auto layers = rewrite(model.layers, by_name, applied);
  require(applied == by_name.size(), ErrorCode::invalid_argument, "plan names layers missing from the model");
  return build_model(std::move(layers), model.input, model.num_classes, seed, false);
}

ModelSpec mask_plan(const ModelSpec& model, const PruningPlan& plan) {
  ModelSpec out = model;
  for (const auto& pl : plan.layers) zero_filters(out, pl.layer, keep_mask(pl));
  return out;
}

double layer_pruning_error(const Tensor& original, const Tensor& pruned, PeNormalization norm) {
  require(original.shape() == pruned.shape(), ErrorCode::shape_mismatch,
          "pruning error compares " + shape_string(original.shape()) + " with " + shape_string(pruned.shape()));
  require(!original.empty(), ErrorCode::invalid_argument, "empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double d = pruned[i] - original[i];
    s += d * d;
  }
  const double n = norm == PeNormalization::per_element ? static_cast<double>(original.size())
                                                        : static_cast<double>(original.dim(0));
  return s / n;
}

double layer_pruning_error_zero_fill(const Tensor& original, const Tensor& pruned,
                                     const std::vector<std::size_t>& kept_channels, PeNormalization norm) {
  require(original.rank() >= 2 && pruned.rank() == original.rank() && pruned.dim(0) == original.dim(0),
          ErrorCode::shape_mismatch, "zero-fill comparison needs matching batch and rank");
  require(kept_channels.size() == pruned.dim(1), ErrorCode::count_mismatch,
          "kept channel list does not match the pruned tensor");
  Tensor filled(original.shape());
  const std::size_t n = original.dim(0), c = original.dim(1);
  const std::size_t inner = original.size() / (n * c);
  require(pruned.size() / (n * pruned.dim(1)) == inner, ErrorCode::shape_mismatch, "spatial extents differ");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < kept_channels.size(); ++k) {
      require(kept_channels[k] < c, ErrorCode::invalid_argument, "kept channel out of range");
      std::copy_n(pruned.data() + (i * pruned.dim(1) + k) * inner, inner,
                  filled.data() + (i * c + kept_channels[k]) * inner);
    }
  return layer_pruning_error(original, filled, norm);
}

double accumulated_error_bound(const std::vector<double>& weight_norms, const std::vector<double>& pe_deltas) {
  require(!pe_deltas.empty(), ErrorCode::invalid_argument, "error bound needs at least one layer");
  require(weight_norms.size() + 1 == pe_deltas.size(), ErrorCode::count_mismatch,
          "error bound needs one weight norm per layer after the first");
  for (double v : weight_norms)
    require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument, "weight norms must be non-negative");
  for (double v : pe_deltas)
    require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument, "pruning errors must be non-negative");
  double bound = 0.0;
  for (std::size_t k = 0; k < pe_deltas.size(); ++k) {
    double term = std::sqrt(pe_deltas[k]);
    for (std::size_t j = k; j < weight_norms.size(); ++j) term *= weight_norms[j];
    bound += term;
  }
  return bound;
}

ErrorReport error_report(const ModelSpec& model, const PruningPlan& plan, const Tensor& batch, PeNormalization norm) {
  std::vector<const LayerSpec*> weights;
  collect_weight_layers(model.layers, weights);
  ErrorReport rep;
  rep.normalization = norm;
  const auto reference = weight_outputs(model, batch);
  ModelSpec current = model;
  auto previous = reference;
  for (const LayerSpec* l : weights) {
    rep.layers.push_back(l->name);
    if (const PlanLayer* pl = plan.find(l->name)) {
      zero_filters(current, l->name, keep_mask(*pl));
      auto next = weight_outputs(current, batch);
      rep.pe_delta.push_back(layer_pruning_error(previous.at(l->name), next.at(l->name), norm));
      previous = std::move(next);
    } else {
      rep.pe_delta.push_back(0.0);
    }
  }
  for (const LayerSpec* l : weights) rep.pe.push_back(layer_pruning_error(reference.at(l->name), previous.at(l->name), norm));
  for (std::size_t i = 1; i < weights.size(); ++i)
    rep.weight_norms.push_back(frobenius_norm(current.parameters.at(weights[i]->name + ".weight")));
  rep.bound = accumulated_error_bound(rep.weight_norms, rep.pe_delta);
  rep.measured = std::sqrt(rep.pe.back());
  return rep;
}

ComparisonReport overpruning_comparison(const ModelSpec& model, const EntropyReport& entropy, double pruning_ratio,
                                        std::size_t min_filters) {
  require(pruning_ratio >= 0.0 && pruning_ratio <= 1.0, ErrorCode::invalid_argument, "pruning ratio must be in [0,1]");
  const auto prunable = prunable_layers(model);
  ComparisonReport rep;
  rep.pruning_ratio = pruning_ratio;
  rep.min_filters = min_filters;

  // Network-slimming style baseline: |gamma| of the BatchNorm right after each conv.
  ModelSpec scratch = model;
  std::vector<std::vector<double>> scores;
  bool all_bn = true;
  for (const LayerSpec* l : prunable) {
    Site site;
    find_site(scratch.layers, l->name, site);
    const auto& list = *site.list;
    if (site.index + 1 < list.size() && list[site.index + 1].kind == LayerKind::batchnorm) {
      const Tensor& g = model.parameters.at(list[site.index + 1].name + ".gamma");
      std::vector<double> s(g.size());
      for (std::size_t j = 0; j < g.size(); ++j) s[j] = std::abs(g[j]);
      scores.push_back(std::move(s));
    } else {
      all_bn = false;
    }
  }
  if (!all_bn) {
    scores.clear();
    for (const auto& e : entropy.layers) scores.push_back(e.filter_entropies);
  }
  rep.baseline_criterion = all_bn ? "bn-scale" : "entropy";

  const PruningPlan plan = build_plan(plan_input(model, entropy, pruning_ratio, min_filters));
  rep.budget = plan.target_keep_count;
  rep.hierarchical_feasible = plan.feasible;
  std::vector<std::size_t> baseline(prunable.size(), 0);
  const auto order = ranked(scores);
  for (std::size_t i = 0; i < std::min(rep.budget, order.size()); ++i) ++baseline[order[i].layer];

  for (std::size_t i = 0; i < prunable.size(); ++i) {
    ComparisonLayer row;
    row.layer = prunable[i]->name;
    row.total = prunable[i]->out_channels;
    row.baseline_kept = baseline[i];
    row.hierarchical_kept = plan.layers[i].kept.size();
    row.hierarchical_removed = plan.layers[i].removed;
    const std::size_t floor = std::min(min_filters, row.total);
    if (row.baseline_kept > 0 && row.baseline_kept < floor) rep.baseline_starved.push_back(row.layer);
    if (row.hierarchical_kept > 0 && row.hierarchical_kept < floor) rep.hierarchical_starved.push_back(row.layer);
    rep.layers.push_back(std::move(row));
  }
  return rep;
}

}  // namespace efaprune
