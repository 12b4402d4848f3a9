/* efaprune C API: filter-redundancy analysis and hierarchical pruning of
 * convolutional networks.
 *
 * Every function returns an efa_status. On failure the thread-local message
 * from efa_last_error() describes the problem. Handles are opaque and owned
 * by the caller; release them with the matching *_free function.
 */
#ifndef EFAPRUNE_EFAPRUNE_H
#define EFAPRUNE_EFAPRUNE_H

#include <stddef.h>
#include <stdint.h>

#if defined(EFAPRUNE_BUILDING_LIBRARY)
#define EFA_API __attribute__((visibility("default")))
#else
#define EFA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum efa_status {
  EFA_OK = 0,
  EFA_ERR_INVALID_ARGUMENT = 1,
  EFA_ERR_SHAPE_MISMATCH = 2,
  EFA_ERR_IO = 3,
  EFA_ERR_BAD_MAGIC = 4,
  EFA_ERR_TRUNCATED = 5,
  EFA_ERR_COUNT_MISMATCH = 6,
  EFA_ERR_UNSUPPORTED_VERSION = 7,
  EFA_ERR_INTEGRITY = 8,
  EFA_ERR_INFEASIBLE = 9,
  EFA_ERR_DIVERGED = 10,
  EFA_ERR_NUMERICAL = 11,
  EFA_ERR_BUSY = 12,
  EFA_ERR_INTERNAL = 99
} efa_status;

typedef struct efa_model efa_model;
typedef struct efa_dataset efa_dataset;
typedef struct efa_analysis efa_analysis;
typedef struct efa_plan efa_plan;

EFA_API const char* efa_version(void);
EFA_API const char* efa_status_name(efa_status status);
/* Message of the last failed call on this thread ("" if none). */
EFA_API const char* efa_last_error(void);
/* Caps kernel worker threads (values below 1 mean 1). The initial value
 * comes from the EFAPRUNE_THREADS environment variable, default 1. */
EFA_API void efa_set_threads(int threads);

/* ---- datasets ---------------------------------------------------------- */

typedef enum efa_split { EFA_SPLIT_TRAIN = 0, EFA_SPLIT_TEST = 1, EFA_SPLIT_CALIBRATION = 2 } efa_split;

/* name: "mnist" / "digits" (IDX files in data_dir), "cifar10" (binary
 * batches in data_dir), or a generator: "separable-2d", "gaussian-blobs",
 * "pattern-images". max_records == 0 loads everything (generators use a
 * default size). seed only affects generators. */
EFA_API efa_status efa_dataset_open(const char* name, const char* data_dir, efa_split split, size_t max_records,
                                    uint64_t seed, efa_dataset** out);
EFA_API efa_status efa_dataset_load_idx(const char* images_path, const char* labels_path, efa_dataset** out);
EFA_API efa_status efa_dataset_load_cifar10(const char* dir, efa_split split, size_t max_records, efa_dataset** out);
EFA_API efa_status efa_dataset_synth(const char* kind, size_t n, uint64_t seed, efa_dataset** out);
/* Seeded subsample of `fraction` of the samples, tagged as calibration data. */
EFA_API efa_status efa_dataset_calibration(const efa_dataset* train, double fraction, uint64_t seed,
                                           efa_dataset** out);
EFA_API efa_status efa_dataset_shape(const efa_dataset* d, size_t* n, size_t* channels, size_t* height,
                                     size_t* width, size_t* classes);
EFA_API efa_status efa_dataset_write_cifar10(const efa_dataset* d, const char* path);
EFA_API efa_status efa_dataset_write_idx(const efa_dataset* d, const char* images_path, const char* labels_path);
EFA_API void efa_dataset_free(efa_dataset* d);

/* ---- models ------------------------------------------------------------ */

typedef struct efa_stats {
  uint64_t filters;
  uint64_t parameters;
  uint64_t flops;
} efa_stats;

/* Presets: vgg-a, vgg-a-desk, resnet56, resnet56-desk, tiny-cnn, mlp. */
EFA_API efa_status efa_model_create(const char* preset, size_t channels, size_t height, size_t width,
                                    size_t classes, uint64_t seed, efa_model** out);
/* Fresh parameters for an architecture document written by
 * efa_model_write_architecture or efa_plan_apply. */
EFA_API efa_status efa_model_from_architecture(const char* path, uint64_t seed, efa_model** out);
EFA_API efa_status efa_model_load(const char* checkpoint_path, efa_model** out);
EFA_API efa_status efa_model_save(const efa_model* m, const char* checkpoint_path);
EFA_API efa_status efa_model_write_architecture(const efa_model* m, const char* path);
/* 1 when both models have the same architecture, else 0. */
EFA_API efa_status efa_model_same_architecture(const efa_model* a, const efa_model* b, int* same);
EFA_API efa_status efa_model_stats(const efa_model* m, efa_stats* out);
EFA_API efa_status efa_model_input(const efa_model* m, size_t* channels, size_t* height, size_t* width,
                                   size_t* classes);
/* Completed training epochs. */
EFA_API efa_status efa_model_epoch(const efa_model* m, size_t* epoch);
EFA_API void efa_model_free(efa_model* m);

/* ---- training ---------------------------------------------------------- */

typedef enum efa_augmentation { EFA_AUG_NONE = 0, EFA_AUG_SHIFT_MIRROR = 1 } efa_augmentation;

typedef struct efa_train_config {
  size_t batch_size;
  double lr;
  double lr_decay;
  double momentum;
  double weight_decay;
  size_t epochs;
  /* NULL/0 selects milestones at 50% and 75% of epochs. */
  const size_t* milestones;
  size_t milestone_count;
  efa_augmentation augmentation;
  uint64_t seed;
} efa_train_config;

typedef struct efa_epoch_metrics {
  size_t epoch; /* zero-based index of the finished epoch */
  double learning_rate;
  double loss;
  double train_accuracy;
} efa_epoch_metrics;

typedef void (*efa_epoch_callback)(const efa_epoch_metrics* metrics, void* user);

EFA_API void efa_train_config_default(efa_train_config* config);
/* Continues from the model's completed epoch count up to config->epochs.
 * EFA_ERR_DIVERGED leaves the model at the last finite epoch. */
EFA_API efa_status efa_train(efa_model* m, const efa_dataset* data, const efa_train_config* config,
                             efa_epoch_callback on_epoch, void* user);
EFA_API efa_status efa_evaluate(const efa_model* m, const efa_dataset* data, double* accuracy);

/* ---- analysis ---------------------------------------------------------- */

typedef struct efa_analysis_config {
  double variance_rate;
  double taylor_epsilon;
  size_t calibration_batches; /* 0 = all */
  size_t batch_size;
  int center;         /* centre observations before PCA */
  int stack;          /* stack per-batch matrices instead of averaging */
  size_t bins;        /* histogram bins for the entropy criteria */
  int norm;           /* 0 = L2, 1 = L1, 2 = max */
  double singularity_tolerance;
  size_t singularity_samples; /* 0 skips singularity diagnostics */
} efa_analysis_config;

EFA_API void efa_analysis_config_default(efa_analysis_config* config);
EFA_API efa_status efa_analyze(const efa_model* m, const efa_dataset* calibration, const efa_analysis_config* config,
                               efa_analysis** out);
/* Recounts the dominant directions of an existing analysis at rate r. */
EFA_API efa_status efa_analysis_with_rate(const efa_analysis* a, double r, efa_analysis** out);
EFA_API efa_status efa_analysis_ratio(const efa_analysis* a, double* filter_pruning_ratio);
/* Any path may be NULL to skip that document. */
EFA_API efa_status efa_analysis_write(const efa_analysis* a, const char* efa_path, const char* entropy_path,
                                      const char* singularity_path);
EFA_API efa_status efa_analysis_read(const char* efa_path, const char* entropy_path, efa_analysis** out);
EFA_API void efa_analysis_free(efa_analysis* a);

/* ---- pruning ----------------------------------------------------------- */

typedef struct efa_plan_info {
  size_t target_keep_count;
  size_t kept_filters;
  size_t total_filters;
  size_t removed_layers;
  int feasible;
} efa_plan_info;

EFA_API efa_status efa_plan_build(const efa_model* m, const efa_analysis* a, size_t min_filters, efa_plan** out);
EFA_API efa_status efa_plan_info_get(const efa_plan* p, efa_plan_info* out);
EFA_API efa_status efa_plan_write(const efa_plan* p, const char* path);
EFA_API efa_status efa_plan_read(const char* path, efa_plan** out);
/* Structural surgery; the result carries fresh parameters drawn from seed. */
EFA_API efa_status efa_plan_apply(const efa_model* m, const efa_plan* p, uint64_t seed, efa_model** out);
/* Per-layer pruning error, accumulated bound and measured output error of
 * the plan masked into the model, on up to max_samples of data. */
EFA_API efa_status efa_plan_error_report(const efa_model* m, const efa_plan* p, const efa_dataset* data,
                                         size_t max_samples, const char* path);
EFA_API void efa_plan_free(efa_plan* p);

/* Flat global-threshold pruning versus the hierarchical plan at the same
 * budget. *hierarchical_ok is 1 when no surviving layer of the
 * hierarchical plan keeps fewer than min_filters (and more than 0). */
EFA_API efa_status efa_overpruning(const efa_model* m, const efa_analysis* a, double pruning_ratio,
                                   size_t min_filters, const char* path, int* hierarchical_ok);

/* Accuracy, filters, parameters and FLOPs of both models with pruned ratios. */
EFA_API efa_status efa_compare(const efa_model* baseline, const efa_model* pruned, const efa_dataset* test,
                               const char* path);

/* ---- verification ------------------------------------------------------ */

typedef void (*efa_verify_callback)(const char* name, int passed, double error, double tolerance,
                                    const char* detail, void* user);

EFA_API efa_status efa_verify(uint64_t seed, efa_verify_callback on_result, void* user, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif /* EFAPRUNE_EFAPRUNE_H */
