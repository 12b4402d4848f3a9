#include "efaprune/efaprune.h"

#include <cmath>
#include <filesystem>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "efaprune/checkpoint.hpp"
#include "efaprune/dataset.hpp"
#include "efaprune/efa.hpp"
#include "efaprune/engine.hpp"
#include "efaprune/entropy.hpp"
#include "efaprune/error.hpp"
#include "efaprune/kernels.hpp"
#include "efaprune/pruner.hpp"
#include "efaprune/report.hpp"
#include "efaprune/train.hpp"
#include "efaprune/verify.hpp"

struct efa_model {
  efaprune::TrainState state;
};

struct efa_dataset {
  efaprune::Dataset data;
};

struct efa_analysis {
  efaprune::EFAReport efa;
  efaprune::EntropyReport entropy;
  std::optional<efaprune::SingularityReport> singularity;
};

struct efa_plan {
  efaprune::PruningPlan plan;
};

namespace {

using namespace efaprune;

thread_local std::string g_last_error;

template <typename F>
efa_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return EFA_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<efa_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EFA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EFA_ERR_INTERNAL;
  }
}

template <typename T>
void need(const T* p, const char* what) {
  require(p != nullptr, ErrorCode::invalid_argument, std::string(what) + " must not be NULL");
}

Split to_split(efa_split s) {
  switch (s) {
    case EFA_SPLIT_TRAIN: return Split::train;
    case EFA_SPLIT_TEST: return Split::test;
    case EFA_SPLIT_CALIBRATION: return Split::calibration;
  }
  fail(ErrorCode::invalid_argument, "unknown split");
}

Dataset open_dataset(const std::string& name, const std::string& dir, Split split, std::size_t max_records,
                     std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (name == "mnist" || name == "digits") {
    require(!dir.empty(), ErrorCode::invalid_argument, "dataset '" + name + "' needs a data directory");
    const std::string prefix = split == Split::test ? "t10k" : "train";
    Dataset d = load_idx((fs::path(dir) / (prefix + "-images-idx3-ubyte")).string(),
                         (fs::path(dir) / (prefix + "-labels-idx1-ubyte")).string(), split);
    if (max_records > 0 && max_records < d.size()) d = head(d, max_records);
    d.split = split;
    return d;
  }
  if (name == "cifar10") {
    require(!dir.empty(), ErrorCode::invalid_argument, "dataset 'cifar10' needs a data directory");
    return load_cifar10_binary(dir, split, max_records);
  }
  const SynthKind kind = parse_synth_kind(name);
  const bool images = kind == SynthKind::pattern_images;
  std::size_t n = max_records;
  if (n == 0) n = split == Split::test ? (images ? 1000 : 500) : (images ? 5000 : 1000);
  // Train and test draws come from disjoint seed streams.
  Dataset d = synth_dataset(kind, n, split == Split::test ? seed ^ 0x5eed7e57ULL : seed);
  d.split = split;
  return d;
}

TrainConfig to_config(const efa_train_config& c) {
  TrainConfig t;
  t.batch_size = c.batch_size;
  t.lr_initial = c.lr;
  t.lr_decay = c.lr_decay;
  t.momentum = c.momentum;
  t.weight_decay = c.weight_decay;
  t.epochs = c.epochs;
  if (c.milestones && c.milestone_count > 0) t.lr_milestones.assign(c.milestones, c.milestones + c.milestone_count);
  else t.lr_milestones = default_milestones(c.epochs);
  t.augmentation = c.augmentation == EFA_AUG_SHIFT_MIRROR ? Augmentation::shift_mirror : Augmentation::none;
  t.seed = c.seed;
  return t;
}

void check_compatible(const ModelSpec& m, const Dataset& d) {
  require(d.channels() == m.input.channels && d.height() == m.input.height && d.width() == m.input.width,
          ErrorCode::shape_mismatch,
          "dataset samples are " + shape_string({d.channels(), d.height(), d.width()}) + " but the model expects " +
              shape_string({m.input.channels, m.input.height, m.input.width}));
  require(d.class_count <= m.num_classes, ErrorCode::shape_mismatch,
          "dataset has " + std::to_string(d.class_count) + " classes, model outputs " + std::to_string(m.num_classes));
}

double pruned_ratio(std::uint64_t base, std::uint64_t pruned) {
  return base == 0 ? 0.0 : 1.0 - static_cast<double>(pruned) / static_cast<double>(base);
}

}  // namespace

extern "C" {

const char* efa_version(void) { return "1.0.0"; }

const char* efa_status_name(efa_status status) {
  if (status == EFA_OK) return "ok";
  if (status == EFA_ERR_INTERNAL) return "internal";
  return error_code_name(static_cast<ErrorCode>(status));
}

const char* efa_last_error(void) { return g_last_error.c_str(); }

void efa_set_threads(int threads) { kernels::set_thread_count(threads < 1 ? 1 : static_cast<std::size_t>(threads)); }

efa_status efa_dataset_open(const char* name, const char* data_dir, efa_split split, size_t max_records,
                            uint64_t seed, efa_dataset** out) {
  return guard([&] {
    need(name, "name");
    need(out, "out");
    *out = new efa_dataset{open_dataset(name, data_dir ? data_dir : "", to_split(split), max_records, seed)};
  });
}

efa_status efa_dataset_load_idx(const char* images_path, const char* labels_path, efa_dataset** out) {
  return guard([&] {
    need(images_path, "images_path");
    need(labels_path, "labels_path");
    need(out, "out");
    *out = new efa_dataset{load_idx(images_path, labels_path)};
  });
}

efa_status efa_dataset_load_cifar10(const char* dir, efa_split split, size_t max_records, efa_dataset** out) {
  return guard([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new efa_dataset{load_cifar10_binary(dir, to_split(split), max_records)};
  });
}

efa_status efa_dataset_synth(const char* kind, size_t n, uint64_t seed, efa_dataset** out) {
  return guard([&] {
    need(kind, "kind");
    need(out, "out");
    *out = new efa_dataset{synth_dataset(parse_synth_kind(kind), n, seed)};
  });
}

efa_status efa_dataset_calibration(const efa_dataset* train, double fraction, uint64_t seed, efa_dataset** out) {
  return guard([&] {
    need(train, "train");
    need(out, "out");
    *out = new efa_dataset{calibration_split(train->data, fraction, seed)};
  });
}

efa_status efa_dataset_shape(const efa_dataset* d, size_t* n, size_t* channels, size_t* height, size_t* width,
                             size_t* classes) {
  return guard([&] {
    need(d, "dataset");
    if (n) *n = d->data.size();
    if (channels) *channels = d->data.channels();
    if (height) *height = d->data.height();
    if (width) *width = d->data.width();
    if (classes) *classes = d->data.class_count;
  });
}

efa_status efa_dataset_write_cifar10(const efa_dataset* d, const char* path) {
  return guard([&] {
    need(d, "dataset");
    need(path, "path");
    write_cifar10_file(d->data, path);
  });
}

efa_status efa_dataset_write_idx(const efa_dataset* d, const char* images_path, const char* labels_path) {
  return guard([&] {
    need(d, "dataset");
    need(images_path, "images_path");
    need(labels_path, "labels_path");
    write_idx(d->data, images_path, labels_path);
  });
}

void efa_dataset_free(efa_dataset* d) { delete d; }

efa_status efa_model_create(const char* preset, size_t channels, size_t height, size_t width, size_t classes,
                            uint64_t seed, efa_model** out) {
  return guard([&] {
    need(preset, "preset");
    need(out, "out");
    *out = new efa_model{start_training(make_preset(preset, {channels, height, width}, classes, seed))};
  });
}

efa_status efa_model_from_architecture(const char* path, uint64_t seed, efa_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new efa_model{start_training(instantiate(architecture_from_json(read_json_file(path)), seed))};
  });
}

efa_status efa_model_load(const char* checkpoint_path, efa_model** out) {
  return guard([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = new efa_model{to_train_state(load_checkpoint(checkpoint_path))};
  });
}

efa_status efa_model_save(const efa_model* m, const char* checkpoint_path) {
  return guard([&] {
    need(m, "model");
    need(checkpoint_path, "checkpoint_path");
    save_checkpoint(checkpoint_path, make_checkpoint(m->state));
  });
}

efa_status efa_model_write_architecture(const efa_model* m, const char* path) {
  return guard([&] {
    need(m, "model");
    need(path, "path");
    write_json_file(path, to_json(architecture_of(m->state.model)));
  });
}

efa_status efa_model_same_architecture(const efa_model* a, const efa_model* b, int* same) {
  return guard([&] {
    need(a, "a");
    need(b, "b");
    need(same, "same");
    *same = architecture_of(a->state.model) == architecture_of(b->state.model) ? 1 : 0;
  });
}

efa_status efa_model_stats(const efa_model* m, efa_stats* out) {
  return guard([&] {
    need(m, "model");
    need(out, "out");
    const ModelStats s = model_stats(m->state.model, m->state.model.input);
    *out = {s.filters, s.parameters, s.flops};
  });
}

efa_status efa_model_input(const efa_model* m, size_t* channels, size_t* height, size_t* width, size_t* classes) {
  return guard([&] {
    need(m, "model");
    const ModelSpec& s = m->state.model;
    if (channels) *channels = s.input.channels;
    if (height) *height = s.input.height;
    if (width) *width = s.input.width;
    if (classes) *classes = s.num_classes;
  });
}

efa_status efa_model_epoch(const efa_model* m, size_t* epoch) {
  return guard([&] {
    need(m, "model");
    need(epoch, "epoch");
    *epoch = m->state.epoch;
  });
}

void efa_model_free(efa_model* m) { delete m; }

void efa_train_config_default(efa_train_config* c) {
  if (!c) return;
  const TrainConfig d;
  *c = efa_train_config{d.batch_size, d.lr_initial, d.lr_decay, d.momentum, d.weight_decay, d.epochs, nullptr, 0,
                        EFA_AUG_NONE, d.seed};
}

efa_status efa_train(efa_model* m, const efa_dataset* data, const efa_train_config* config,
                     efa_epoch_callback on_epoch, void* user) {
  return guard([&] {
    need(m, "model");
    need(data, "data");
    need(config, "config");
    check_compatible(m->state.model, data->data);
    EpochCallback cb;
    if (on_epoch) {
      cb = [&](const EpochMetrics& em) {
        const efa_epoch_metrics cm{em.epoch, em.learning_rate, em.loss, em.train_accuracy};
        on_epoch(&cm, user);
      };
    }
    const TrainOutcome r = train(m->state, data->data, to_config(*config), cb);
    if (r.status == TrainStatus::diverged)
      fail(ErrorCode::diverged, "loss became non-finite in epoch " + std::to_string(r.failed_epoch) +
                                    "; model restored to the end of epoch " + std::to_string(m->state.epoch));
  });
}

efa_status efa_evaluate(const efa_model* m, const efa_dataset* data, double* accuracy) {
  return guard([&] {
    need(m, "model");
    need(data, "data");
    need(accuracy, "accuracy");
    check_compatible(m->state.model, data->data);
    *accuracy = evaluate_accuracy(m->state.model, data->data);
  });
}

void efa_analysis_config_default(efa_analysis_config* c) {
  if (!c) return;
  const EFAConfig d;
  *c = efa_analysis_config{d.variance_rate, d.taylor_epsilon, d.calibration_batches, d.batch_size, d.center ? 1 : 0,
                           d.stack_snapshots ? 1 : 0, kDefaultBins, 0, 1e-3, 256};
}

efa_status efa_analyze(const efa_model* m, const efa_dataset* calibration, const efa_analysis_config* config,
                       efa_analysis** out) {
  return guard([&] {
    need(m, "model");
    need(calibration, "calibration");
    need(config, "config");
    need(out, "out");
    check_compatible(m->state.model, calibration->data);
    EFAConfig c;
    c.variance_rate = config->variance_rate;
    c.taylor_epsilon = config->taylor_epsilon;
    c.calibration_batches = config->calibration_batches;
    c.batch_size = config->batch_size;
    c.center = config->center != 0;
    c.stack_snapshots = config->stack != 0;
    require(config->norm >= 0 && config->norm <= 2, ErrorCode::invalid_argument, "norm must be 0, 1 or 2");
    const WeightNorm norm = config->norm == 1 ? WeightNorm::l1 : config->norm == 2 ? WeightNorm::max : WeightNorm::l2;
    auto a = std::make_unique<efa_analysis>();
    a->efa = analyze(m->state.model, calibration->data, c);
    a->entropy = entropy_report(m->state.model, config->bins, norm);
    if (config->singularity_samples > 0) {
      const Dataset probe = head(calibration->data, config->singularity_samples);
      a->singularity = detect_singularities(m->state.model, probe.images, config->singularity_tolerance);
    }
    *out = a.release();
  });
}

efa_status efa_analysis_with_rate(const efa_analysis* a, double r, efa_analysis** out) {
  return guard([&] {
    need(a, "analysis");
    need(out, "out");
    *out = new efa_analysis{with_variance_rate(a->efa, r), a->entropy, a->singularity};
  });
}

efa_status efa_analysis_ratio(const efa_analysis* a, double* ratio) {
  return guard([&] {
    need(a, "analysis");
    need(ratio, "ratio");
    *ratio = a->efa.filter_pruning_ratio;
  });
}

efa_status efa_analysis_write(const efa_analysis* a, const char* efa_path, const char* entropy_path,
                              const char* singularity_path) {
  return guard([&] {
    need(a, "analysis");
    if (efa_path) write_json_file(efa_path, to_json(a->efa));
    if (entropy_path) write_json_file(entropy_path, to_json(a->entropy));
    if (singularity_path) {
      require(a->singularity.has_value(), ErrorCode::invalid_argument, "analysis has no singularity diagnostics");
      write_json_file(singularity_path, to_json(*a->singularity));
    }
  });
}

efa_status efa_analysis_read(const char* efa_path, const char* entropy_path, efa_analysis** out) {
  return guard([&] {
    need(efa_path, "efa_path");
    need(entropy_path, "entropy_path");
    need(out, "out");
    *out = new efa_analysis{efa_report_from_json(read_json_file(efa_path)),
                            entropy_report_from_json(read_json_file(entropy_path)), std::nullopt};
  });
}

void efa_analysis_free(efa_analysis* a) { delete a; }

efa_status efa_plan_build(const efa_model* m, const efa_analysis* a, size_t min_filters, efa_plan** out) {
  return guard([&] {
    need(m, "model");
    need(a, "analysis");
    need(out, "out");
    *out = new efa_plan{build_plan(m->state.model, a->efa, a->entropy, min_filters)};
  });
}

efa_status efa_plan_info_get(const efa_plan* p, efa_plan_info* out) {
  return guard([&] {
    need(p, "plan");
    need(out, "out");
    *out = {p->plan.target_keep_count, p->plan.kept_count(), p->plan.total_filters, p->plan.removed_layers.size(),
            p->plan.feasible ? 1 : 0};
  });
}

efa_status efa_plan_write(const efa_plan* p, const char* path) {
  return guard([&] {
    need(p, "plan");
    need(path, "path");
    write_json_file(path, to_json(p->plan));
  });
}

efa_status efa_plan_read(const char* path, efa_plan** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new efa_plan{plan_from_json(read_json_file(path))};
  });
}

efa_status efa_plan_apply(const efa_model* m, const efa_plan* p, uint64_t seed, efa_model** out) {
  return guard([&] {
    need(m, "model");
    need(p, "plan");
    need(out, "out");
    *out = new efa_model{start_training(apply_plan(m->state.model, p->plan, seed))};
  });
}

efa_status efa_plan_error_report(const efa_model* m, const efa_plan* p, const efa_dataset* data, size_t max_samples,
                                 const char* path) {
  return guard([&] {
    need(m, "model");
    need(p, "plan");
    need(data, "data");
    need(path, "path");
    check_compatible(m->state.model, data->data);
    const Dataset probe = max_samples > 0 ? head(data->data, max_samples) : data->data;
    write_json_file(path, to_json(error_report(m->state.model, p->plan, probe.images)));
  });
}

void efa_plan_free(efa_plan* p) { delete p; }

efa_status efa_overpruning(const efa_model* m, const efa_analysis* a, double pruning_ratio, size_t min_filters,
                           const char* path, int* hierarchical_ok) {
  return guard([&] {
    need(m, "model");
    need(a, "analysis");
    const ComparisonReport r = overpruning_comparison(m->state.model, a->entropy, pruning_ratio, min_filters);
    if (path) write_json_file(path, to_json(r));
    if (hierarchical_ok) *hierarchical_ok = r.hierarchical_feasible && r.hierarchical_starved.empty() ? 1 : 0;
  });
}

efa_status efa_compare(const efa_model* baseline, const efa_model* pruned, const efa_dataset* test, const char* path) {
  return guard([&] {
    need(baseline, "baseline");
    need(pruned, "pruned");
    need(test, "test");
    need(path, "path");
    const ModelSpec& b = baseline->state.model;
    const ModelSpec& p = pruned->state.model;
    require(b.input == p.input && b.num_classes == p.num_classes, ErrorCode::shape_mismatch,
            "baseline and pruned models have different input or class count");
    check_compatible(b, test->data);
    const ModelStats sb = model_stats(b, b.input), sp = model_stats(p, p.input);
    const double ab = evaluate_accuracy(b, test->data), ap = evaluate_accuracy(p, test->data);
    auto row = [](double acc, const ModelStats& s) { return Json{{"accuracy", acc}, {"stats", to_json(s)}}; };
    const Json doc = {{"kind", "comparison"},
                      {"test_samples", test->data.size()},
                      {"baseline", row(ab, sb)},
                      {"pruned", row(ap, sp)},
                      {"accuracy_delta", ap - ab},
                      {"pruned_ratio",
                       {{"filters", pruned_ratio(sb.filters, sp.filters)},
                        {"parameters", pruned_ratio(sb.parameters, sp.parameters)},
                        {"flops", pruned_ratio(sb.flops, sp.flops)}}}};
    write_json_file(path, doc);
  });
}

efa_status efa_verify(uint64_t seed, efa_verify_callback on_result, void* user, int* all_passed) {
  return guard([&] {
    bool ok = true;
    for (const auto& r : run_verification(seed)) {
      ok = ok && r.passed;
      if (on_result) on_result(r.name.c_str(), r.passed ? 1 : 0, r.error, r.tolerance, r.detail.c_str(), user);
    }
    if (all_passed) *all_passed = ok ? 1 : 0;
  });
}

}  // extern "C"
