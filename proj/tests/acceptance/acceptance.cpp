// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "efaprune/checkpoint.hpp"
#include "efaprune/dataset.hpp"
#include "efaprune/efa.hpp"
#include "efaprune/engine.hpp"
#include "efaprune/entropy.hpp"
#include "efaprune/linalg.hpp"
#include "efaprune/pruner.hpp"
#include "efaprune/report.hpp"
#include "efaprune/train.hpp"
#include "efaprune/verify.hpp"

namespace fs = std::filesystem;
using namespace efaprune;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Context {
  fs::path data_dir;
  fs::path work;
  // Criterion 7 leaves its trained baseline and calibration set for criterion 8.
  std::optional<ModelSpec> digits_model;
  std::optional<Dataset> digits_calibration;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool train_status_failed(const TrainOutcome& o) { return o.status != TrainStatus::completed; }

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// ---- 1 --------------------------------------------------------------------

Outcome gradient_correctness(Context&) {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t sampled = 0;
  std::string where;
  for (int net = 0; net < 5; ++net) {
    const std::size_t convs = 1 + rng() % 3;  // plus the linear head: at most 4 weight layers
    const std::size_t side = 6 + rng() % 3;
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i < convs; ++i) {
      const std::size_t stride = i == 1 && rng() % 2 ? 2 : 1;
      // A bias feeding BatchNorm has an identically zero gradient, so bias only without BatchNorm.
      const bool bn = rng() % 2;
      layers.push_back(conv(2 + rng() % 4, 3, stride, 1, !bn));
      if (bn) layers.push_back(batchnorm());
      layers.push_back(relu());
    }
    if (rng() % 2) layers.push_back(maxpool(2));
    layers.push_back(flatten());
    layers.push_back(linear(3));
    layers.push_back(softmax_xent());
    const ModelSpec m = build_model(std::move(layers), {2, side, side}, 3, 200 + net);
    const Tensor x = random_tensor({4, 2, side, side}, rng);
    const std::vector<int> y{0, 1, 2, static_cast<int>(rng() % 3)};
    const GradientCheck g = gradient_check(m, x, y, 80, 300 + net, Mode::train);
    sampled += g.sampled;
    if (g.max_relative_error >= worst) {
      worst = g.max_relative_error;
      where = "net " + std::to_string(net) + " " + g.worst_parameter;
    }
  }
  return {worst <= 1e-4, fmt("%zu sampled coordinates, max relative error %.3g (%s)", sampled, worst, where.c_str())};
}

// ---- 2 --------------------------------------------------------------------

Outcome eigensolver_oracle(Context&) {
  std::mt19937_64 rng(202);
  double eig_err = 0.0, trace_err = 0.0, recon_err = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Tensor a = random_tensor({8, 8}, rng);
    Tensor s({8, 8});
    Eigen::MatrixXd e(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) e(i, j) = s.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
    const SpectralDecomposition d = sym_eig(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(e);
    double trace = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      eig_err = std::max(eig_err, std::abs(d.eigenvalues[i] - ref.eigenvalues()[7 - static_cast<long>(i)]));
      trace += s.at(i, i);
      sum += d.eigenvalues[i];
    }
    trace_err = std::max(trace_err, std::abs(trace - sum));
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double r = 0.0;
        for (std::size_t q = 0; q < 8; ++q) r += d.eigenvectors.at(i, q) * d.eigenvalues[q] * d.eigenvectors.at(j, q);
        recon_err = std::max(recon_err, std::abs(r - s.at(i, j)));
      }
  }
  const bool ok = eig_err <= 1e-8 && trace_err <= 1e-8 && recon_err <= 1e-8;
  return {ok, fmt("max |eigenvalue - Eigen| %.3g, trace error %.3g, reconstruction error %.3g", eig_err, trace_err,
                  recon_err)};
}

// ---- 3 --------------------------------------------------------------------

Outcome fisher_hessian(Context&) {
  const FisherHessianCheck c = fisher_hessian_check(50000, 3);
  return {c.gradient_norm < 1e-5 && c.relative_frobenius <= 0.15,
          fmt("gradient norm %.3g, relative Frobenius distance %.4f", c.gradient_norm, c.relative_frobenius)};
}

// ---- 4 --------------------------------------------------------------------

Outcome entropy_invariants(Context&) {
  std::mt19937_64 rng(404);
  std::size_t violations = 0;
  double self_err = 0.0, gibbs_gap = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 9 + rng() % 600;
    const std::size_t m = 2 + rng() % 1500;
    const Tensor w = random_tensor({n}, rng, 0.05 + static_cast<double>(rng() % 100) / 50.0);
    const double h = filter_entropy(w.values(), m);
    if (!(h >= 0.0 && h <= std::log(static_cast<double>(m)) + 1e-12)) ++violations;
  }
  const std::vector<double> point(64, 0.7);
  const double point_h = filter_entropy(point, 1000);
  std::vector<double> uniform(1000);
  for (std::size_t i = 0; i < uniform.size(); ++i) uniform[i] = static_cast<double>(i);
  const double uniform_err = std::abs(filter_entropy(uniform, 1000) - std::log(1000.0));
  for (int i = 0; i < 1000; ++i) {
    const Tensor a = random_tensor({50 + rng() % 500}, rng);
    Tensor b = random_tensor({50 + rng() % 500}, rng);
    if (i % 3 == 0)
      for (double& v : b.values()) v = std::abs(v);
    const std::size_t m = i % 2 ? 1000 : 2 + rng() % 200;
    self_err = std::max(self_err, std::abs(layer_cross_entropy(a.values(), a.values(), m) -
                                           filter_entropy(a.values(), m)));
    gibbs_gap = std::max(gibbs_gap, shared_bin_entropy(a.values(), b.values(), m) -
                                        layer_cross_entropy(a.values(), b.values(), m));
  }
  const bool ok = violations == 0 && point_h == 0.0 && uniform_err <= 1e-9 && self_err <= 1e-9 && gibbs_gap <= 1e-9;
  return {ok, fmt("bound violations %zu, point mass H %.3g, uniform |H - ln m| %.3g, |CE(A,A) - H(A)| %.3g, "
                  "max H(A) - CE(A,B) %.3g",
                  violations, point_h, uniform_err, self_err, gibbs_gap)};
}

// ---- 5 --------------------------------------------------------------------

struct PlanFixture {
  std::string name;
  std::vector<PlanLayerInput> layers;
  std::size_t keep = 0;     // target keep count N
  double ratio = -1.0;      // used instead of `keep` when set
  std::size_t min_filters = 5;
  bool feasible = true;
  std::vector<std::string> removed;
  std::vector<std::vector<std::size_t>> kept;  // per layer, ignored when infeasible
};

PlanLayerInput P(std::string name, std::vector<double> info, std::optional<double> ce = std::nullopt) {
  return {std::move(name), std::move(info), ce, false};
}
PlanLayerInput R(std::string name, std::vector<double> info, std::optional<double> ce) {
  return {std::move(name), std::move(info), ce, true};
}

std::vector<PlanFixture> hand_traced_fixtures() {
  using V = std::vector<std::size_t>;
  std::vector<PlanFixture> f;
  f.push_back({"keep everything", {P("A", {1, 2}), R("B", {3}, 0.5)}, 3, -1, 1, true, {}, {V{0, 1}, V{0}}});
  f.push_back({"layer starvation",
               {P("A", {5, 4, 3}), R("B", {2, 1, 0.5}, 0.2), P("C", {9, 8, 7}, 0.7)}, 6, -1, 5, true, {"B"},
               {V{0, 1, 2}, V{}, V{0, 1, 2}}});
  f.push_back({"plain top-N", {P("A", {1, 5, 3, 4}), P("B", {6, 2, 7, 0})}, 4, -1, 1, true, {}, {V{1, 3}, V{0, 2}}});
  f.push_back({"ties go to the lower layer", {P("A", {1, 1}), P("B", {1, 1})}, 2, -1, 1, true, {}, {V{0}, V{0}}});
  f.push_back({"ties go to the lower filter", {P("A", {2, 3, 3, 1}), P("B", {0.5})}, 2, -1, 1, true, {},
               {V{1}, V{0}}});
  f.push_back({"lowest cross-entropy first, ties by index",
               {P("A", {9, 9, 9, 9}), R("B", {1, 1}, 0.4), R("C", {1, 1}, 0.3), R("D", {1, 1}, 0.3),
                P("E", {9, 9, 9, 9}, 0.1)},
               8, -1, 2, true, {"C", "D", "B"}, {V{0, 1, 2, 3}, V{}, V{}, V{}, V{0, 1, 2, 3}}});
  f.push_back({"removal returns the budget",
               {P("A", {4, 3}), R("B", {0.5, 0.4, 0.3}, 0.1), P("C", {9, 8, 7, 6, 5}, 0.2)}, 7, -1, 2, true, {"B"},
               {V{0, 1}, V{}, V{0, 1, 2, 3, 4}}});
  f.push_back({"cascading force-keep",
               {P("A", {1, 1, 1}), P("B", {2, 2, 2}), P("C", {3, 3, 3})}, 6, -1, 2, true, {},
               {V{0, 1}, V{0, 1}, V{0, 1}}});
  f.push_back({"reserved filters exceed the budget",
               {P("A", {1, 2, 3, 4, 5}), P("B", {1, 2, 3, 4, 5}), P("C", {1, 2, 3, 4, 5})}, 3, -1, 5, false, {},
               {}});
  f.push_back({"removal leaves too few filters", {P("A", {9}), R("B", {0, 0, 0}, 0.1), P("C", {9}, 0.2)}, 4, -1, 3,
               false, {"B"}, {}});
  f.push_back({"floor capped by layer size, still infeasible", {P("A", {1, 2}), P("B", {3, 4, 5})}, 4, -1, 10, false,
               {}, {}});
  f.push_back({"healthy layer with low cross-entropy survives",
               {P("A", {1, 2, 3}), R("B", {8, 9}, 0.01), P("C", {4, 5, 6}, 0.5)}, 4, -1, 1, true, {},
               {V{2}, V{0, 1}, V{2}}});
  f.push_back({"missing cross-entropy sorts last",
               {P("A", {5, 5}), R("B", {0, 0}, std::nullopt), R("C", {0, 0}, 2.0), P("D", {5, 5}, 1.0)}, 4, -1, 1,
               true, {"C", "B"}, {V{0, 1}, V{}, V{}, V{0, 1}}});
  f.push_back({"removal before force-keep",
               {P("A", {0.1, 0.2}), R("B", {0.3, 0.4}, 0.5), P("C", {9, 8, 7, 6}, 0.4)}, 4, -1, 2, true, {"B"},
               {V{0, 1}, V{}, V{0, 1}}});
  f.push_back({"force-keep of the first layer", {P("A", {1, 2, 3}), P("B", {4, 5, 6})}, 3, -1, 1, true, {},
               {V{2}, V{1, 2}}});
  f.push_back({"half keep rounds up", {P("A", {1, 2}), P("B", {3, 4, 5})}, 0, 0.5, 1, true, {}, {V{1}, V{1, 2}}});
  f.push_back({"ratio 1 with protected layers", {P("A", {1}), P("B", {2})}, 0, 1.0, 1, false, {}, {}});
  f.push_back({"ratio 1 with a removable layer", {P("A", {1}), R("B", {2}, 0.3), P("C", {3}, 0.1)}, 0, 1.0, 1, false,
               {"B"}, {}});
  f.push_back({"partial survivor above the floor",
               {P("A", {9, 9, 9}), R("B", {1, 1, 1}, 0.7), R("C", {2, 2, 2}, 0.6), P("D", {9, 9, 9}, 0.2)}, 8, -1, 2,
               true, {"B"}, {V{0, 1, 2}, V{}, V{0, 1}, V{0, 1, 2}}});
  f.push_back({"force-keep then removal",
               {P("A", {3, 3}), R("B", {3, 3}, 0.2), P("C", {3, 3}, 0.9)}, 4, -1, 2, true, {"B"},
               {V{0, 1}, V{}, V{0, 1}}});
  return f;
}

Outcome plan_conformance(Context&) {
  std::size_t hand_ok = 0;
  std::string first_bad;
  const auto fixtures = hand_traced_fixtures();
  for (const auto& fx : fixtures) {
    PlanInput in;
    in.layers = fx.layers;
    in.min_filters = fx.min_filters;
    std::size_t total = 0;
    for (const auto& l : fx.layers) total += l.info.size();
    in.filter_pruning_ratio = fx.ratio >= 0.0 ? fx.ratio : 1.0 - static_cast<double>(fx.keep) / static_cast<double>(total);
    const PruningPlan p = build_plan(in);
    bool ok = p.feasible == fx.feasible && p.removed_layers == fx.removed;
    if (ok && fx.feasible)
      for (std::size_t l = 0; l < fx.layers.size(); ++l) ok = ok && p.layers[l].kept == fx.kept[l];
    if (ok) {
      ++hand_ok;
    } else if (first_bad.empty()) {
      first_bad = fx.name;
    }
  }

  std::mt19937_64 rng(505);
  std::size_t random_bad = 0, feasible_count = 0;
  for (int t = 0; t < 1000; ++t) {
    PlanInput in;
    const std::size_t L = 2 + rng() % 8;
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> info(1 + rng() % 20);
      for (double& v : info) v = rng() % 4 == 0 ? std::floor(u(rng)) : u(rng);
      std::optional<double> ce;
      if (l > 0) ce = u(rng);
      in.layers.push_back({"L" + std::to_string(l), info, ce, l > 0 && l + 1 < L});
    }
    in.filter_pruning_ratio = std::uniform_real_distribution<double>(0.0, 0.97)(rng);
    in.min_filters = 1 + rng() % 6;
    const PruningPlan p = build_plan(in);
    if (!p.feasible) continue;
    ++feasible_count;
    bool ok = p.kept_count() == p.target_keep_count;
    for (std::size_t l = 0; l < L; ++l) {
      const PlanLayer& pl = p.layers[l];
      if (pl.removed) {
        ok = ok && pl.kept.empty() && in.layers[l].removable;
      } else {
        ok = ok && pl.kept.size() >= std::min(in.min_filters, pl.total);
      }
    }
    if (!ok) ++random_bad;
  }
  return {hand_ok == fixtures.size() && random_bad == 0,
          fmt("%zu/%zu hand-traced fixtures match%s%s; %zu random fixtures (%zu feasible), %zu invariant violations",
              hand_ok, fixtures.size(), first_bad.empty() ? "" : ", first mismatch: ", first_bad.c_str(),
              std::size_t{1000}, feasible_count, random_bad)};
}

// ---- 6 --------------------------------------------------------------------

Outcome overpruning(Context& ctx) {
  Dataset train_set, test;
  std::string source;
  if (const char* dir = std::getenv("EFAPRUNE_CIFAR_DIR"); dir && *dir) {
    train_set = load_cifar10_binary(dir, Split::train, 5000);
    test = load_cifar10_binary(dir, Split::test, 1000);
    source = std::string("CIFAR-10 from ") + dir;
  } else {
    // Stand-in images pass through the same binary writer and reader.
    const fs::path standin = ctx.work / "cifar_standin";
    fs::create_directories(standin);
    write_cifar10_file(synth_dataset(SynthKind::pattern_images, 5000, 61), (standin / "data_batch_1.bin").string());
    write_cifar10_file(synth_dataset(SynthKind::pattern_images, 1000, 62), (standin / "test_batch.bin").string());
    train_set = load_cifar10_binary(standin.string(), Split::train);
    test = load_cifar10_binary(standin.string(), Split::test);
    source = "synthetic pattern images in CIFAR-10 binary format";
  }
  TrainState s = start_training(make_preset("vgg-a-desk", {3, 32, 32}, 10, 6));
  TrainConfig c;
  c.epochs = 8;
  c.batch_size = 64;
  c.lr_initial = 0.05;
  c.lr_milestones = default_milestones(c.epochs);
  c.seed = 6;
  if (train_status_failed(train(s, train_set, c))) return {false, "baseline training diverged"};
  const double acc = evaluate_accuracy(s.model, test);
  const EntropyReport entropy = entropy_report(s.model);
  const ComparisonReport r = overpruning_comparison(s.model, entropy, 0.81, 5);
  std::size_t flat_min = SIZE_MAX, hier_min = SIZE_MAX;
  for (const auto& l : r.layers) {
    flat_min = std::min(flat_min, l.baseline_kept);
    if (!l.hierarchical_removed) hier_min = std::min(hier_min, l.hierarchical_kept);
  }
  const bool ok = r.hierarchical_feasible && r.hierarchical_starved.empty();
  return {ok, fmt("%s, %zu train images, baseline top-1 %.4f; budget %zu filters; flat (%s) starved layers %zu, "
                  "fewest kept %zu; hierarchical starved layers %zu, fewest kept %zu, removed %zu",
                  source.c_str(), train_set.size(), acc, r.budget, r.baseline_criterion.c_str(), r.baseline_starved.size(),
                  flat_min, r.hierarchical_starved.size(), hier_min,
                  static_cast<std::size_t>(std::count_if(r.layers.begin(), r.layers.end(),
                                                         [](const auto& l) { return l.hierarchical_removed; })))};
}

// ---- 7 --------------------------------------------------------------------

TrainConfig digits_config(std::uint64_t seed) {
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 32;
  c.lr_initial = 0.05;
  c.lr_milestones = default_milestones(c.epochs);
  c.seed = seed;
  return c;
}

Dataset digits(const Context& ctx, bool test) {
  const std::string prefix = test ? "t10k" : "train";
  return load_idx((ctx.data_dir / (prefix + "-images-idx3-ubyte")).string(),
                  (ctx.data_dir / (prefix + "-labels-idx1-ubyte")).string(), test ? Split::test : Split::train);
}

Outcome end_to_end(Context& ctx) {
  const Dataset train_set = digits(ctx, false), test = digits(ctx, true);
  const InputShape input{train_set.channels(), train_set.height(), train_set.width()};
  TrainState base = start_training(make_preset("tiny-cnn", input, train_set.class_count, 1));
  if (train_status_failed(train(base, train_set, digits_config(1)))) return {false, "baseline training diverged"};
  const double base_acc = evaluate_accuracy(base.model, test);

  const Dataset calib = calibration_split(train_set, 0.1, 1);
  EFAConfig ec;
  ec.variance_rate = 0.95;
  const EFAReport efa = analyze(base.model, calib, ec);
  const EntropyReport entropy = entropy_report(base.model);
  const PruningPlan plan = build_plan(base.model, efa, entropy);
  if (!plan.feasible) return {false, "plan infeasible: " + plan.diagnostics};

  // Layer-choice stability across the cross-entropy normalisation.
  const PruningPlan plan_l1 = build_plan(base.model, efa, entropy_report(base.model, kDefaultBins, WeightNorm::l1));
  std::printf("info: removed layers with L2 normalisation [");
  for (const auto& l : plan.removed_layers) std::printf(" %s", l.c_str());
  std::printf(" ], with L1 [");
  for (const auto& l : plan_l1.removed_layers) std::printf(" %s", l.c_str());
  std::printf(" ]: %s\n", plan.removed_layers == plan_l1.removed_layers ? "same" : "different");

  TrainState pruned = start_training(apply_plan(base.model, plan, 1));
  if (train_status_failed(train(pruned, train_set, digits_config(1)))) return {false, "retraining diverged"};
  const double pruned_acc = evaluate_accuracy(pruned.model, test);

  const ModelStats sb = model_stats(base.model, input), sp = model_stats(pruned.model, input);
  const double params_removed = 1.0 - static_cast<double>(sp.parameters) / static_cast<double>(sb.parameters);
  const double drop_pp = 100.0 * (base_acc - pruned_acc);
  ctx.digits_model = base.model;
  ctx.digits_calibration = calib;
  const bool ok = efa.filter_pruning_ratio > 0.2 && efa.filter_pruning_ratio < 0.95 && drop_pp <= 2.0 &&
                  params_removed >= 0.40;
  return {ok, fmt("digits %zu/%zu, baseline top-1 %.4f, ratio %.4f, kept %zu/%zu filters, %zu layers removed, "
                  "retrained top-1 %.4f (drop %.2f pp), parameters removed %.1f%%",
                  train_set.size(), test.size(), base_acc, efa.filter_pruning_ratio, plan.kept_count(),
                  plan.total_filters, plan.removed_layers.size(), pruned_acc, drop_pp, 100.0 * params_removed)};
}

// ---- 8 --------------------------------------------------------------------

Outcome monotonicity(Context& ctx) {
  if (!ctx.digits_model) return {false, "criterion 7 did not produce a checkpoint"};
  std::vector<double> ratios;
  for (double r : {0.99, 0.95, 0.90}) {
    EFAConfig ec;
    ec.variance_rate = r;
    ratios.push_back(analyze(*ctx.digits_model, *ctx.digits_calibration, ec).filter_pruning_ratio);
  }
  const bool ok = ratios[0] <= ratios[1] && ratios[1] <= ratios[2];
  return {ok, fmt("filter pruning ratio at r = 0.99/0.95/0.90: %.4f / %.4f / %.4f", ratios[0], ratios[1], ratios[2])};
}

// ---- 9 --------------------------------------------------------------------

Outcome error_bound(Context&) {
  const Dataset train_set = synth_dataset(SynthKind::gaussian_blobs, 600, 9);
  TrainState s = start_training(make_preset("mlp", {2, 1, 1}, train_set.class_count, 9));
  TrainConfig c;
  c.epochs = 20;
  c.batch_size = 32;
  c.lr_initial = 0.05;
  c.lr_milestones = default_milestones(c.epochs);
  c.seed = 9;
  if (train_status_failed(train(s, train_set, c))) return {false, "training diverged"};
  const Tensor batch = batch_images(head(train_set, 256), [] {
    std::vector<std::size_t> idx(256);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }());
  std::mt19937_64 rng(99);
  std::size_t held = 0;
  double worst_slack = std::numeric_limits<double>::infinity(), max_measured = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    PruningPlan plan = identity_plan(s.model);
    PlanLayer& pl = plan.layers[rng() % plan.layers.size()];
    std::shuffle(pl.kept.begin(), pl.kept.end(), rng);
    pl.kept.resize(1 + rng() % (pl.kept.size() - 1));
    std::sort(pl.kept.begin(), pl.kept.end());
    const ErrorReport r = error_report(s.model, plan, batch);
    if (r.measured <= r.bound + 1e-9) ++held;
    worst_slack = std::min(worst_slack, r.bound - r.measured);
    max_measured = std::max(max_measured, r.measured);
  }
  return {held == 20, fmt("%zu/20 removals within the bound (3 weight layers), smallest bound - measured %.4g, "
                          "largest measured error %.4g",
                          held, worst_slack, max_measured)};
}

// ---- 10 -------------------------------------------------------------------

Outcome static_accounting(Context&) {
  const ModelStats vgg = model_stats(make_preset("vgg-a", {3, 32, 32}, 10, 0), {3, 32, 32});
  const ModelStats res = model_stats(make_preset("resnet56", {3, 32, 32}, 10, 0), {3, 32, 32});
  const double p_err = std::abs(static_cast<double>(vgg.parameters) - 14.7e6) / 14.7e6;
  const double f_err = std::abs(static_cast<double>(vgg.flops) - 314e6) / 314e6;
  const bool ok = vgg.filters == 4224 && p_err <= 0.01 && f_err <= 0.02 && res.filters == 1008;
  return {ok, fmt("VGG-A filters %llu, parameters %.4gM (%.2f%% off), FLOPs %.4gM (%.2f%% off); ResNet56 prunable "
                  "filters %llu",
                  static_cast<unsigned long long>(vgg.filters), static_cast<double>(vgg.parameters) / 1e6,
                  100.0 * p_err, static_cast<double>(vgg.flops) / 1e6, 100.0 * f_err,
                  static_cast<unsigned long long>(res.filters))};
}

// ---- 11 -------------------------------------------------------------------

Outcome determinism(Context& ctx) {
  const Dataset train_set = head(digits(ctx, false), 400);
  const InputShape input{train_set.channels(), train_set.height(), train_set.width()};
  TrainConfig c = digits_config(11);
  c.epochs = 4;
  c.lr_milestones = default_milestones(c.epochs);
  const fs::path dir = ctx.work / "determinism";
  fs::create_directories(dir);

  auto run = [&](const std::string& tag) {
    TrainState s = start_training(make_preset("tiny-cnn", input, train_set.class_count, 11));
    train(s, train_set, c);
    save_checkpoint((dir / (tag + ".ckpt")).string(), make_checkpoint(s));
    const Dataset calib = calibration_split(train_set, 0.25, 11);
    const EFAReport efa = analyze(s.model, calib, EFAConfig{});
    write_json_file((dir / (tag + "_plan.json")).string(),
                    to_json(build_plan(s.model, efa, entropy_report(s.model), 3)));
    return s;
  };
  const TrainState a = run("a");
  run("b");
  const bool same_ckpt = read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt");
  const bool same_plan = read_bytes(dir / "a_plan.json") == read_bytes(dir / "b_plan.json");

  const Checkpoint loaded = load_checkpoint((dir / "a.ckpt").string());
  const bool round_trip = loaded.parameters == a.model.parameters && loaded.buffers == a.model.buffers &&
                          loaded.momentum == a.momentum && encode_checkpoint(loaded) == read_bytes(dir / "a.ckpt");

  TrainState part = start_training(make_preset("tiny-cnn", input, train_set.class_count, 11));
  TrainConfig first = c;
  first.epochs = 2;
  first.lr_milestones.clear();
  for (std::size_t m : c.lr_milestones)
    if (m < first.epochs) first.lr_milestones.push_back(m);
  train(part, train_set, first);
  save_checkpoint((dir / "part.ckpt").string(), make_checkpoint(part));
  TrainState resumed = to_train_state(load_checkpoint((dir / "part.ckpt").string()));
  train(resumed, train_set, c);
  const bool resume = resumed.loss_curve == a.loss_curve && resumed.model.parameters == a.model.parameters;

  return {same_ckpt && same_plan && round_trip && resume,
          fmt("identical checkpoint files %s, identical plan files %s, bit-exact round trip %s, resumed loss curve "
              "equals uninterrupted %s",
              same_ckpt ? "yes" : "no", same_plan ? "yes" : "no", round_trip ? "yes" : "no", resume ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<Outcome(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string data_dir, work;
  std::vector<int> only;
  app.add_option("--data-dir", data_dir, "Directory with the digits IDX files")->required();
  app.add_option("--work", work, "Scratch directory")->required();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  Context ctx{data_dir, work, {}, {}};
  fs::create_directories(ctx.work);
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 60, gradient_correctness},
      {2, "eigensolver oracle", 1, eigensolver_oracle},
      {3, "Fisher-Hessian identity", 120, fisher_hessian},
      {4, "entropy invariants", 10, entropy_invariants},
      {5, "plan conformance", 30, plan_conformance},
      {6, "over-pruning structure", 1800, overpruning},
      {7, "end-to-end compression", 2700, end_to_end},
      {8, "monotonicity in r", 60, monotonicity},
      {9, "error bound soundness", 120, error_bound},
      {10, "static accounting", 1, static_accounting},
      {11, "determinism and persistence", 300, determinism},
  };
  std::set<int> selected(only.begin(), only.end());
  if (selected.count(8)) selected.insert(7);

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool passed = o.passed && in_time;
    failed += !passed;
    std::printf("criterion %2d %s: %s: %s [%.1f s of %.0f s%s]\n", c.id, passed ? "PASS" : "FAIL", c.title,
                o.detail.c_str(), secs, c.budget_seconds, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
