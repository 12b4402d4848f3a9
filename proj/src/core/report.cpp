#include "efaprune/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "efaprune/error.hpp"

namespace efaprune {

namespace {

void format_number(const Json& v, std::string& out) {
  if (v.is_number_integer() || v.is_number_unsigned()) {
    out += v.dump();
    return;
  }
  const double d = v.get<double>();
  if (!std::isfinite(d)) {
    out += "null";
    return;
  }
  if (d == 0.0) {
    out += "0";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  out += buf;
}

bool is_scalar(const Json& v) { return !v.is_array() && !v.is_object(); }

void emit(const Json& v, int depth, std::string& out) {
  const std::string pad(static_cast<std::size_t>(depth + 1) * 2, ' ');
  const std::string close(static_cast<std::size_t>(depth) * 2, ' ');
  if (v.is_object()) {
    if (v.empty()) {
      out += "{}";
      return;
    }
    out += "{\n";
    bool first = true;
    for (auto it = v.begin(); it != v.end(); ++it) {
      if (!first) out += ",\n";
      first = false;
      out += pad + Json(it.key()).dump() + ": ";
      emit(it.value(), depth + 1, out);
    }
    out += "\n" + close + "}";
  } else if (v.is_array()) {
    if (v.empty()) {
      out += "[]";
      return;
    }
    if (std::all_of(v.begin(), v.end(), is_scalar)) {
      out += "[";
      bool first = true;
      for (const auto& e : v) {
        if (!first) out += ", ";
        first = false;
        emit(e, depth + 1, out);
      }
      out += "]";
      return;
    }
    out += "[\n";
    bool first = true;
    for (const auto& e : v) {
      if (!first) out += ",\n";
      first = false;
      out += pad;
      emit(e, depth + 1, out);
    }
    out += "\n" + close + "]";
  } else if (v.is_number()) {
    format_number(v, out);
  } else {
    out += v.dump();
  }
}

double number_or_nan(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

Json layer_to_json(const LayerSpec& l) {
  Json j = {{"kind", layer_kind_name(l.kind)},
            {"name", l.name},
            {"in_channels", l.in_channels},
            {"out_channels", l.out_channels},
            {"kernel", l.kernel},
            {"stride", l.stride},
            {"padding", l.padding},
            {"bias", l.bias},
            {"prunable", l.prunable}};
  if (l.kind == LayerKind::residual_block) {
    Json members = Json::array();
    for (const auto& m : l.block_members) members.push_back(layer_to_json(m));
    j["members"] = std::move(members);
  }
  return j;
}

LayerSpec layer_from_json(const Json& j) {
  LayerSpec l;
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  l.in_channels = j.at("in_channels").get<std::size_t>();
  l.out_channels = j.at("out_channels").get<std::size_t>();
  l.kernel = j.at("kernel").get<std::size_t>();
  l.stride = j.at("stride").get<std::size_t>();
  l.padding = j.at("padding").get<std::size_t>();
  l.bias = j.at("bias").get<bool>();
  l.prunable = j.at("prunable").get<bool>();
  if (j.contains("members"))
    for (const auto& m : j.at("members")) l.block_members.push_back(layer_from_json(m));
  return l;
}

template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("malformed ") + what + " document: " + e.what());
  }
}

}  // namespace

std::string dump_canonical(const Json& value) {
  std::string out;
  emit(value, 0, out);
  return out;
}

Json parse_document(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::invalid_argument, std::string("cannot parse document: ") + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::invalid_argument, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
    out << text;
    require(static_cast<bool>(out), ErrorCode::io, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::io, "cannot rename " + tmp + ": " + ec.message());
}

void write_json_file(const std::string& path, const Json& value) { write_text_file(path, dump_canonical(value) + "\n"); }

Json to_json(const Architecture& arch) {
  Json layers = Json::array();
  for (const auto& l : arch.layers) layers.push_back(layer_to_json(l));
  return {{"input", {{"channels", arch.input.channels}, {"height", arch.input.height}, {"width", arch.input.width}}},
          {"num_classes", arch.num_classes},
          {"layers", std::move(layers)}};
}

Architecture architecture_from_json(const Json& j) {
  return guarded("architecture", [&] {
    Architecture a;
    const Json& in = j.at("input");
    a.input = {in.at("channels").get<std::size_t>(), in.at("height").get<std::size_t>(),
               in.at("width").get<std::size_t>()};
    a.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) a.layers.push_back(layer_from_json(l));
    return a;
  });
}

Json to_json(const EFAReport& r) {
  Json layers = Json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.layer},
                      {"total_channels", l.total_channels},
                      {"dominant", l.dominant},
                      {"non_dominant", l.non_dominant},
                      {"degenerate", l.degenerate},
                      {"masked_fraction", l.masked_fraction},
                      {"eigenvalues", l.eigenvalues},
                      {"explained_variance", l.explained_variance}});
  return {{"kind", "efa"},
          {"filter_pruning_ratio", r.filter_pruning_ratio},
          {"variance_rate", r.variance_rate},
          {"taylor_epsilon", r.taylor_epsilon},
          {"snapshot_count", r.snapshot_count},
          {"layers", std::move(layers)}};
}

EFAReport efa_report_from_json(const Json& j) {
  return guarded("EFA report", [&] {
    EFAReport r;
    r.filter_pruning_ratio = j.at("filter_pruning_ratio").get<double>();
    r.variance_rate = j.at("variance_rate").get<double>();
    r.taylor_epsilon = j.at("taylor_epsilon").get<double>();
    r.snapshot_count = j.at("snapshot_count").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      EFALayer e;
      e.layer = l.at("layer").get<std::string>();
      e.total_channels = l.at("total_channels").get<std::size_t>();
      e.dominant = l.at("dominant").get<std::size_t>();
      e.non_dominant = l.at("non_dominant").get<std::size_t>();
      e.degenerate = l.at("degenerate").get<bool>();
      e.masked_fraction = l.at("masked_fraction").get<double>();
      e.eigenvalues = l.at("eigenvalues").get<std::vector<double>>();
      e.explained_variance = l.at("explained_variance").get<std::vector<double>>();
      r.layers.push_back(std::move(e));
    }
    return r;
  });
}

Json to_json(const EntropyReport& r) {
  Json layers = Json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.layer},
                      {"predecessor", l.predecessor},
                      {"cross_entropy", optional_number(l.cross_entropy)},
                      {"filter_entropies", l.filter_entropies}});
  return {{"kind", "entropy"}, {"bin_count", r.bin_count}, {"norm", weight_norm_name(r.norm)}, {"layers", layers}};
}

EntropyReport entropy_report_from_json(const Json& j) {
  return guarded("entropy report", [&] {
    EntropyReport r;
    r.bin_count = j.at("bin_count").get<std::size_t>();
    r.norm = parse_weight_norm(j.at("norm").get<std::string>());
    for (const auto& l : j.at("layers")) {
      LayerEntropy e;
      e.layer = l.at("layer").get<std::string>();
      e.predecessor = l.at("predecessor").get<std::string>();
      e.cross_entropy = optional_from(l.at("cross_entropy"));
      e.filter_entropies = l.at("filter_entropies").get<std::vector<double>>();
      r.layers.push_back(std::move(e));
    }
    return r;
  });
}

Json to_json(const PruningPlan& p) {
  Json layers = Json::array();
  for (const auto& l : p.layers)
    layers.push_back({{"layer", l.layer}, {"total", l.total}, {"kept", l.kept}, {"removed", l.removed}});
  Json removed = Json::array();
  for (const auto& name : p.removed_layers) {
    std::optional<double> ce;
    for (const auto& t : p.threshold_trace)
      if (t.action == TraceAction::remove_layer && t.layer == name) ce = t.cross_entropy;
    removed.push_back({{"layer", name}, {"cross_entropy", optional_number(ce)}});
  }
  Json trace = Json::array();
  for (const auto& t : p.threshold_trace)
    trace.push_back({{"iteration", t.iteration},
                     {"threshold", t.threshold},
                     {"action", trace_action_name(t.action)},
                     {"layer", t.layer},
                     {"cross_entropy", optional_number(t.cross_entropy)},
                     {"under_threshold", t.under_threshold}});
  return {{"kind", "plan"},
          {"target_keep_count", p.target_keep_count},
          {"kept_filter_count", p.kept_count()},
          {"total_filters", p.total_filters},
          {"filter_pruning_ratio", p.filter_pruning_ratio},
          {"variance_rate", p.variance_rate},
          {"min_filters", p.min_filters},
          {"feasible", p.feasible},
          {"diagnostics", p.diagnostics},
          {"layers", std::move(layers)},
          {"removed_layers", std::move(removed)},
          {"threshold_trace", std::move(trace)}};
}

PruningPlan plan_from_json(const Json& j) {
  return guarded("plan", [&] {
    PruningPlan p;
    p.target_keep_count = j.at("target_keep_count").get<std::size_t>();
    p.total_filters = j.at("total_filters").get<std::size_t>();
    p.filter_pruning_ratio = j.at("filter_pruning_ratio").get<double>();
    p.variance_rate = j.at("variance_rate").get<double>();
    p.min_filters = j.at("min_filters").get<std::size_t>();
    p.feasible = j.at("feasible").get<bool>();
    p.diagnostics = j.at("diagnostics").get<std::string>();
    for (const auto& l : j.at("layers"))
      p.layers.push_back({l.at("layer").get<std::string>(), l.at("total").get<std::size_t>(),
                          l.at("kept").get<std::vector<std::size_t>>(), l.at("removed").get<bool>()});
    for (const auto& r : j.at("removed_layers")) p.removed_layers.push_back(r.at("layer").get<std::string>());
    for (const auto& t : j.at("threshold_trace"))
      p.threshold_trace.push_back({t.at("iteration").get<std::size_t>(), number_or_nan(t.at("threshold")),
                                   parse_trace_action(t.at("action").get<std::string>()),
                                   t.at("layer").get<std::string>(), optional_from(t.at("cross_entropy")),
                                   t.at("under_threshold").get<std::vector<std::string>>()});
    return p;
  });
}

Json to_json(const SingularityReport& r) {
  Json elimination = Json::array();
  for (const auto& [layer, filter] : r.elimination) elimination.push_back({{"layer", layer}, {"filter", filter}});
  Json overlap = Json::array();
  for (const auto& o : r.overlap)
    overlap.push_back({{"layer", o.layer}, {"first", o.first}, {"second", o.second}, {"cosine", o.cosine}});
  Json linearity = Json::array();
  for (const auto& d : r.linearity)
    linearity.push_back({{"layer", d.layer}, {"units", d.units}, {"rank", d.rank}, {"deficit", d.deficit}});
  return {{"kind", "singularity"},
          {"tolerance", r.tolerance},
          {"elimination", elimination},
          {"overlap", overlap},
          {"linearity", linearity}};
}

Json to_json(const ErrorReport& r) {
  return {{"kind", "pruning_error"},
          {"normalization", r.normalization == PeNormalization::per_sample ? "per_sample" : "per_element"},
          {"layers", r.layers},
          {"pe", r.pe},
          {"pe_delta", r.pe_delta},
          {"weight_norms", r.weight_norms},
          {"bound", r.bound},
          {"measured", r.measured}};
}

Json to_json(const ComparisonReport& r) {
  Json layers = Json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.layer},
                      {"total", l.total},
                      {"baseline_kept", l.baseline_kept},
                      {"hierarchical_kept", l.hierarchical_kept},
                      {"hierarchical_removed", l.hierarchical_removed}});
  return {{"kind", "overpruning"},
          {"pruning_ratio", r.pruning_ratio},
          {"budget", r.budget},
          {"min_filters", r.min_filters},
          {"baseline_criterion", r.baseline_criterion},
          {"layers", std::move(layers)},
          {"baseline_starved", r.baseline_starved},
          {"hierarchical_starved", r.hierarchical_starved},
          {"hierarchical_feasible", r.hierarchical_feasible}};
}

Json to_json(const ModelStats& s) {
  return {{"filters", s.filters}, {"parameters", s.parameters}, {"flops", s.flops}};
}

}  // namespace efaprune
