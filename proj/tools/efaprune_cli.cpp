// efaprune command-line front end. Links only the C API.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <optional>
#include <sstream>
#include <utility>
#include <string>
#include <vector>

#include "efaprune/efaprune.h"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct Failure {
  int code;
  std::string message;
};

void check(efa_status s, const std::string& what) {
  if (s != EFA_OK) throw Failure{static_cast<int>(s), what + ": " + efa_status_name(s) + ": " + efa_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{EFA_ERR_INVALID_ARGUMENT, message}; }

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
  Handle& operator=(Handle&& o) noexcept {
    std::swap(p, o.p);
    return *this;
  }
  ~Handle() { Free(p); }
  T** out() { return &p; }
  T* get() const { return p; }
};

using Model = Handle<efa_model, efa_model_free>;
using Data = Handle<efa_dataset, efa_dataset_free>;
using Analysis = Handle<efa_analysis, efa_analysis_free>;
using Plan = Handle<efa_plan, efa_plan_free>;

// Advisory lock so two commands never write the same output directory.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".efaprune.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Failure{EFA_ERR_IO, "cannot create output directory " + dir.string() + ": " + ec.message()};
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST)
        throw Failure{EFA_ERR_BUSY, "output directory " + dir.string() + " is locked by another command (" +
                                        path_.string() + ")"};
      throw Failure{EFA_ERR_IO, "cannot create lock file " + path_.string() + ": " + std::strerror(errno)};
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The pid is informational only.
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

void write_document(const fs::path& path, const Json& doc) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Failure{EFA_ERR_IO, "cannot write " + path.string()};
    f << doc.dump(2) << '\n';
    if (!f) throw Failure{EFA_ERR_IO, "cannot write " + path.string()};
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Failure{EFA_ERR_IO, "cannot rename " + tmp.string() + ": " + ec.message()};
}

struct Options {
  std::string config;
  std::string out;
  std::uint64_t seed = 1;

  std::string model = "tiny-cnn";
  std::string dataset;
  std::string data_dir;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::uint64_t data_seed = 7;
  double calib_fraction = 0.1;

  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> milestones;
  std::string augment = "none";

  double variance_rate = 0.95;
  double taylor_eps = 1e-6;
  std::size_t calib_batches = 0;
  std::size_t bins = 1000;
  std::string norm = "l2";
  bool stack = false;
  bool no_center = false;
  double singularity_tol = 1e-3;
  std::size_t singularity_samples = 256;

  std::size_t min_filters = 5;
  std::string checkpoint;
  std::string reports;
  std::string arch;
  std::string baseline;
  std::string pruned;
  std::optional<double> overprune_ratio;
  std::size_t error_samples = 256;
};

bool needs_directory(const std::string& dataset) {
  return dataset == "mnist" || dataset == "digits" || dataset == "cifar10";
}

void require_dataset(const Options& o) {
  if (o.dataset.empty()) usage_error("--dataset is required (mnist, digits, cifar10, separable-2d, gaussian-blobs, "
                                     "pattern-images)");
  if (needs_directory(o.dataset) && o.data_dir.empty())
    usage_error("--data-dir is required for dataset '" + o.dataset + "'");
  if (needs_directory(o.dataset) && !fs::is_directory(o.data_dir))
    usage_error("--data-dir '" + o.data_dir + "' is not a directory");
}

Data open_split(const Options& o, efa_split split) {
  require_dataset(o);
  Data d;
  const std::size_t limit = split == EFA_SPLIT_TEST ? o.test_size : o.train_size;
  check(efa_dataset_open(o.dataset.c_str(), o.data_dir.c_str(), split, limit, o.data_seed, d.out()),
        "loading dataset '" + o.dataset + "'");
  return d;
}

Data open_calibration(const Options& o) {
  Data train = open_split(o, EFA_SPLIT_TRAIN);
  Data calib;
  check(efa_dataset_calibration(train.get(), o.calib_fraction, o.seed, calib.out()), "calibration split");
  return calib;
}

Model load_model(const std::string& checkpoint, const char* flag) {
  if (checkpoint.empty()) usage_error(std::string(flag) + " is required");
  if (!fs::exists(checkpoint)) usage_error(std::string(flag) + " '" + checkpoint + "' does not exist");
  Model m;
  check(efa_model_load(checkpoint.c_str(), m.out()), "loading checkpoint " + checkpoint);
  return m;
}

Json stats_json(const efa_model* m) {
  efa_stats s{};
  check(efa_model_stats(m, &s), "model statistics");
  return {{"filters", s.filters}, {"parameters", s.parameters}, {"flops", s.flops}};
}

efa_train_config train_config(const Options& o) {
  efa_train_config c;
  efa_train_config_default(&c);
  c.batch_size = o.batch_size;
  c.lr = o.lr;
  c.lr_decay = o.lr_decay;
  c.momentum = o.momentum;
  c.weight_decay = o.weight_decay;
  c.epochs = o.epochs;
  c.milestones = o.milestones.empty() ? nullptr : o.milestones.data();
  c.milestone_count = o.milestones.size();
  if (o.augment == "none") c.augmentation = EFA_AUG_NONE;
  else if (o.augment == "shift-mirror") c.augmentation = EFA_AUG_SHIFT_MIRROR;
  else usage_error("--augment must be 'none' or 'shift-mirror'");
  c.seed = o.seed;
  return c;
}

void on_epoch(const efa_epoch_metrics* m, void* user) {
  auto* log = static_cast<Json*>(user);
  log->push_back({{"epoch", m->epoch},
                  {"learning_rate", m->learning_rate},
                  {"loss", m->loss},
                  {"train_accuracy", m->train_accuracy}});
  std::fprintf(stderr, "epoch %zu  lr %.5g  loss %.6f  train top-1 %.4f\n", m->epoch, m->learning_rate, m->loss,
               m->train_accuracy);
}

// Shared by train (preset, architecture file or resumed checkpoint) and
// retrain (pruned architecture, fresh parameters).
int run_training(const Options& o, const std::string& command, Model model, const std::string& model_label) {
  const fs::path out(o.out);
  DirectoryLock lock(out);
  Data train = open_split(o, EFA_SPLIT_TRAIN);
  Data test = open_split(o, EFA_SPLIT_TEST);
  const efa_train_config cfg = train_config(o);
  std::size_t start_epoch = 0;
  check(efa_model_epoch(model.get(), &start_epoch), "model epoch");

  Json epochs = Json::array();
  check(efa_train(model.get(), train.get(), &cfg, on_epoch, &epochs), "training");
  double test_acc = 0.0;
  check(efa_evaluate(model.get(), test.get(), &test_acc), "evaluation");
  std::fprintf(stderr, "test top-1 %.4f\n", test_acc);

  check(efa_model_save(model.get(), (out / "model.ckpt").c_str()), "saving checkpoint");
  check(efa_model_write_architecture(model.get(), (out / "architecture.json").c_str()), "writing architecture");
  const Json config = {{"batch_size", o.batch_size},    {"lr", o.lr},
                       {"lr_decay", o.lr_decay},        {"momentum", o.momentum},
                       {"weight_decay", o.weight_decay}, {"epochs", o.epochs},
                       {"milestones", o.milestones},     {"augment", o.augment},
                       {"seed", o.seed}};
  write_document(out / "metrics.json", {{"kind", "metrics"},
                                        {"command", command},
                                        {"model", model_label},
                                        {"dataset", o.dataset},
                                        {"data_seed", o.data_seed},
                                        {"train_size", o.train_size},
                                        {"test_size", o.test_size},
                                        {"start_epoch", start_epoch},
                                        {"config", config},
                                        {"epochs", epochs},
                                        {"test_accuracy", test_acc},
                                        {"stats", stats_json(model.get())}});
  return 0;
}

int cmd_train(const Options& o) {
  Model model;
  std::string label = o.model;
  if (!o.checkpoint.empty()) {
    model = load_model(o.checkpoint, "--checkpoint");
    label = "checkpoint:" + o.checkpoint;
  } else if (fs::path(o.model).extension() == ".json") {
    if (!fs::exists(o.model)) usage_error("--model '" + o.model + "' does not exist");
    check(efa_model_from_architecture(o.model.c_str(), o.seed, model.out()), "loading architecture " + o.model);
  } else {
    Data probe = open_split(o, EFA_SPLIT_TEST);
    std::size_t n = 0, c = 0, h = 0, w = 0, k = 0;
    check(efa_dataset_shape(probe.get(), &n, &c, &h, &w, &k), "dataset shape");
    check(efa_model_create(o.model.c_str(), c, h, w, k, o.seed, model.out()), "--model");
  }
  return run_training(o, "train", std::move(model), label);
}

int cmd_retrain(const Options& o) {
  if (o.arch.empty()) usage_error("--arch is required (pruned_arch.json from the prune command)");
  if (!fs::exists(o.arch)) usage_error("--arch '" + o.arch + "' does not exist");
  Model model;
  check(efa_model_from_architecture(o.arch.c_str(), o.seed, model.out()), "loading architecture " + o.arch);
  return run_training(o, "retrain", std::move(model), "architecture:" + o.arch);
}

int cmd_analyze(const Options& o) {
  const fs::path out(o.out);
  DirectoryLock lock(out);
  Model model = load_model(o.checkpoint, "--checkpoint");
  if (!o.arch.empty()) {
    Model expected;
    check(efa_model_from_architecture(o.arch.c_str(), 0, expected.out()), "--arch " + o.arch);
    int same = 0;
    check(efa_model_same_architecture(model.get(), expected.get(), &same), "architecture comparison");
    if (!same)
      throw Failure{EFA_ERR_SHAPE_MISMATCH, "checkpoint " + o.checkpoint + " does not match architecture " + o.arch};
  }
  Data calib = open_calibration(o);
  efa_analysis_config cfg;
  efa_analysis_config_default(&cfg);
  cfg.variance_rate = o.variance_rate;
  cfg.taylor_epsilon = o.taylor_eps;
  cfg.calibration_batches = o.calib_batches;
  cfg.batch_size = o.batch_size;
  cfg.center = o.no_center ? 0 : 1;
  cfg.stack = o.stack ? 1 : 0;
  cfg.bins = o.bins;
  if (o.norm == "l2") cfg.norm = 0;
  else if (o.norm == "l1") cfg.norm = 1;
  else if (o.norm == "max") cfg.norm = 2;
  else usage_error("--norm must be l2, l1 or max");
  cfg.singularity_tolerance = o.singularity_tol;
  cfg.singularity_samples = o.singularity_samples;
  Analysis a;
  check(efa_analyze(model.get(), calib.get(), &cfg, a.out()), "analysis");
  const std::string sing = (out / "singularity.json").string();
  check(efa_analysis_write(a.get(), (out / "efa.json").c_str(), (out / "entropy.json").c_str(),
                           o.singularity_samples > 0 ? sing.c_str() : nullptr),
        "writing reports");
  double ratio = 0.0;
  check(efa_analysis_ratio(a.get(), &ratio), "pruning ratio");
  std::fprintf(stderr, "variance rate %.4g: filter pruning ratio %.6f\n", o.variance_rate, ratio);
  return 0;
}

int cmd_prune(const Options& o, bool variance_rate_given) {
  const fs::path out(o.out);
  DirectoryLock lock(out);
  Model model = load_model(o.checkpoint, "--checkpoint");
  const fs::path reports = o.reports.empty() ? out : fs::path(o.reports);
  const fs::path efa_path = reports / "efa.json", entropy_path = reports / "entropy.json";
  if (!fs::exists(efa_path) || !fs::exists(entropy_path))
    usage_error("--reports directory '" + reports.string() + "' must contain efa.json and entropy.json");
  Analysis a;
  check(efa_analysis_read(efa_path.c_str(), entropy_path.c_str(), a.out()), "reading reports");
  if (variance_rate_given) {
    Analysis r;
    check(efa_analysis_with_rate(a.get(), o.variance_rate, r.out()), "--variance-rate");
    a = std::move(r);
  }
  Plan plan;
  check(efa_plan_build(model.get(), a.get(), o.min_filters, plan.out()), "building plan");
  check(efa_plan_write(plan.get(), (out / "plan.json").c_str()), "writing plan");
  efa_plan_info info{};
  check(efa_plan_info_get(plan.get(), &info), "plan summary");
  if (o.overprune_ratio) {
    int ok = 0;
    check(efa_overpruning(model.get(), a.get(), *o.overprune_ratio, o.min_filters,
                          (out / "overpruning.json").c_str(), &ok),
          "over-pruning comparison");
  }
  if (!info.feasible)
    throw Failure{EFA_ERR_INFEASIBLE, "pruning plan is infeasible (see diagnostics in " +
                                          (out / "plan.json").string() + ")"};
  Model pruned;
  check(efa_plan_apply(model.get(), plan.get(), o.seed, pruned.out()), "applying plan");
  check(efa_model_write_architecture(pruned.get(), (out / "pruned_arch.json").c_str()), "writing architecture");
  if (!o.dataset.empty()) {
    Data calib = open_calibration(o);
    check(efa_plan_error_report(model.get(), plan.get(), calib.get(), o.error_samples,
                                (out / "error_report.json").c_str()),
          "error report");
  }
  std::fprintf(stderr, "kept %zu of %zu filters (target %zu), removed %zu layers\n", info.kept_filters,
               info.total_filters, info.target_keep_count, info.removed_layers);
  return 0;
}

int cmd_compare(const Options& o) {
  const fs::path out(o.out);
  DirectoryLock lock(out);
  Model base = load_model(o.baseline, "--baseline");
  Model pruned = load_model(o.pruned, "--pruned");
  Data test = open_split(o, EFA_SPLIT_TEST);
  check(efa_compare(base.get(), pruned.get(), test.get(), (out / "comparison.json").c_str()), "comparison");
  return 0;
}

struct VerifyLog {
  Json results = Json::array();
};

void on_verify(const char* name, int passed, double error, double tolerance, const char* detail, void* user) {
  std::printf("%s %s error=%.3g tolerance=%.3g %s\n", passed ? "PASS" : "FAIL", name, error, tolerance, detail);
  static_cast<VerifyLog*>(user)->results.push_back(
      {{"name", name}, {"passed", passed != 0}, {"error", error}, {"tolerance", tolerance}, {"detail", detail}});
}

int cmd_verify(const Options& o) {
  std::optional<DirectoryLock> lock;
  if (!o.out.empty()) lock.emplace(o.out);
  VerifyLog log;
  int all = 0;
  check(efa_verify(o.seed, on_verify, &log, &all), "verification");
  if (!o.out.empty())
    write_document(fs::path(o.out) / "verify.json", {{"kind", "verify"}, {"seed", o.seed}, {"results", log.results}});
  if (!all) throw Failure{EFA_ERR_NUMERICAL, "verification failed"};
  return 0;
}

// Turns a flat JSON object into "--key=value" arguments placed before the
// user's flags, so the last occurrence (the command line) wins.
std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream f(path);
  if (!f) usage_error("--config '" + path + "' cannot be read");
  Json doc;
  try {
    doc = Json::parse(f);
  } catch (const std::exception& e) {
    usage_error("--config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) usage_error("--config '" + path + "' must contain a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : doc.items()) {
    std::string flag = key;
    for (char& ch : flag)
      if (ch == '_') ch = '-';
    if (value.is_array()) {
      for (const auto& v : value) args.push_back("--" + flag + "=" + (v.is_string() ? v.get<std::string>() : v.dump()));
    } else if (value.is_string()) {
      args.push_back("--" + flag + "=" + value.get<std::string>());
    } else if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + flag);
    } else if (value.is_number()) {
      args.push_back("--" + flag + "=" + value.dump());
    } else {
      usage_error("--config key '" + key + "' has an unsupported value");
    }
  }
  return args;
}

std::optional<std::string> find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"efaprune: eigen-analysis driven hierarchical filter pruning"};
  app.require_subcommand(1, 1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", efa_version());

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON file of flag values (flags take precedence)");
    c->add_option("--seed", o.seed, "Seed for initialisation, shuffling and calibration sampling")
        ->capture_default_str();
  };
  auto output = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory")->required(); };
  auto data = [&](CLI::App* c) {
    c->add_option("--dataset", o.dataset, "mnist, digits, cifar10, separable-2d, gaussian-blobs, pattern-images");
    c->add_option("--data-dir", o.data_dir, "Directory holding IDX or CIFAR-10 binary files");
    c->add_option("--train-size", o.train_size, "Cap on training records (0 = all or generator default)");
    c->add_option("--test-size", o.test_size, "Cap on test records (0 = all or generator default)");
    c->add_option("--data-seed", o.data_seed, "Seed of the synthetic generators")->capture_default_str();
  };
  auto calibration = [&](CLI::App* c) {
    c->add_option("--calib-fraction", o.calib_fraction, "Fraction of the training set used for calibration")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
  };
  auto training = [&](CLI::App* c) {
    c->add_option("--epochs", o.epochs, "Total epochs")->capture_default_str();
    c->add_option("--batch-size", o.batch_size, "Mini-batch size")->capture_default_str();
    c->add_option("--lr", o.lr, "Initial learning rate")->capture_default_str();
    c->add_option("--lr-decay", o.lr_decay, "Factor applied at each milestone")->capture_default_str();
    c->add_option("--milestones", o.milestones, "Epochs at which the rate decays (default 50% and 75%)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
        ->delimiter(',');
    c->add_option("--momentum", o.momentum, "SGD momentum")->capture_default_str();
    c->add_option("--weight-decay", o.weight_decay, "L2 weight decay")->capture_default_str();
    c->add_option("--augment", o.augment, "none or shift-mirror")->capture_default_str();
  };

  CLI::App* train = app.add_subcommand("train", "Train a model and write model.ckpt and metrics.json");
  common(train);
  output(train);
  data(train);
  training(train);
  train->add_option("--model", o.model, "Preset (vgg-a, vgg-a-desk, resnet56, resnet56-desk, tiny-cnn, mlp) or "
                                        "architecture .json")
      ->capture_default_str();
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");

  CLI::App* analyze = app.add_subcommand("analyze", "Write efa.json, entropy.json and singularity.json");
  common(analyze);
  output(analyze);
  data(analyze);
  calibration(analyze);
  analyze->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  analyze->add_option("--arch", o.arch, "Optional architecture .json the checkpoint must match");
  analyze->add_option("--variance-rate", o.variance_rate, "Explained-variance rate r")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  analyze->add_option("--taylor-eps", o.taylor_eps, "Relative Taylor-impact threshold")->capture_default_str();
  analyze->add_option("--calib-batches", o.calib_batches, "Calibration batches (0 = all)")->capture_default_str();
  analyze->add_option("--batch-size", o.batch_size, "Calibration batch size")->capture_default_str();
  analyze->add_option("--bins", o.bins, "Histogram bins")->capture_default_str();
  analyze->add_option("--norm", o.norm, "Layer normalisation for cross-entropy: l2, l1, max")->capture_default_str();
  analyze->add_flag("--stack", o.stack, "Stack per-batch gradient matrices instead of averaging");
  analyze->add_flag("--no-center", o.no_center, "Skip centring before the eigen-analysis");
  analyze->add_option("--singularity-tol", o.singularity_tol, "Rank tolerance")->capture_default_str();
  analyze->add_option("--singularity-samples", o.singularity_samples, "Probe samples (0 = skip)")
      ->capture_default_str();

  CLI::App* prune = app.add_subcommand("prune", "Write plan.json, pruned_arch.json and error_report.json");
  common(prune);
  output(prune);
  data(prune);
  calibration(prune);
  prune->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  prune->add_option("--reports", o.reports, "Directory with efa.json and entropy.json (default --out)");
  prune->add_option("--min-filters", o.min_filters, "Minimum filters per surviving layer")->capture_default_str();
  CLI::Option* rate_opt = prune->add_option("--variance-rate", o.variance_rate, "Recount dominant directions at r")
                              ->check(CLI::Range(0.0, 1.0));
  prune->add_option("--overprune-ratio", o.overprune_ratio, "Also compare flat pruning at this ratio");
  prune->add_option("--error-samples", o.error_samples, "Calibration samples for the error report")
      ->capture_default_str();

  CLI::App* retrain = app.add_subcommand("retrain", "Train a pruned architecture from scratch");
  common(retrain);
  output(retrain);
  data(retrain);
  training(retrain);
  retrain->add_option("--arch", o.arch, "pruned_arch.json from prune");

  CLI::App* compare = app.add_subcommand("compare", "Write comparison.json for a baseline and a pruned model");
  common(compare);
  output(compare);
  data(compare);
  compare->add_option("--baseline", o.baseline, "Baseline checkpoint")->required();
  compare->add_option("--pruned", o.pruned, "Pruned checkpoint")->required();

  CLI::App* verify = app.add_subcommand("verify", "Run the embedded oracle suites");
  common(verify);
  verify->add_option("--out", o.out, "Optional directory for verify.json");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
    if (const auto path = find_config(argc, argv)) {
      // CLI11 consumes the vector from the back, so config values go after the
      // subcommand name and before the user's flags.
      std::vector<std::string> extra = config_arguments(*path);
      std::vector<std::string> merged(args.begin(), args.end() - 1);
      merged.insert(merged.end(), extra.rbegin(), extra.rend());
      merged.push_back(args.back());
      args = std::move(merged);
    }
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    }
    if (train->parsed()) return cmd_train(o);
    if (analyze->parsed()) return cmd_analyze(o);
    if (prune->parsed()) return cmd_prune(o, rate_opt->count() > 0);
    if (retrain->parsed()) return cmd_retrain(o);
    if (compare->parsed()) return cmd_compare(o);
    if (verify->parsed()) return cmd_verify(o);
    return 1;
  } catch (const Failure& f) {
    std::fprintf(stderr, "efaprune: %s\n", f.message.c_str());
    return f.code == EFA_ERR_INTERNAL ? 70 : f.code;
  }
}
