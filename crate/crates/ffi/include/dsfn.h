#ifndef DSFN_H
#define DSFN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsfnStatus {
  DSFN_STATUS_OK = 0,
  DSFN_STATUS_NULL_POINTER = 1,
  DSFN_STATUS_CONFIG = 2,
  DSFN_STATUS_DATA = 3,
  DSFN_STATUS_NUMERICAL = 4,
  DSFN_STATUS_PANIC = 5,
} DsfnStatus;

typedef enum DsfnKernel {
  DSFN_KERNEL_IDENTITY = 0,
  DSFN_KERNEL_RBF = 1,
} DsfnKernel;

typedef enum DsfnFilter {
  DSFN_FILTER_ZERO = 0,
  DSFN_FILTER_TIKHONOV = 1,
  DSFN_FILTER_TRUNCATED_SVD = 2,
} DsfnFilter;

/**
 * Opaque labeled dataset.
 */
typedef struct DsfnDataset DsfnDataset;

/**
 * Kernel and spectral filter of the classifier.
 */
typedef struct DsfnModel {
  enum DsfnKernel kernel;
  /**
   * RBF bandwidth σ²; values ≤ 0 select the feature dimension.
   */
  double rbf_sigma2;
  enum DsfnFilter filter;
  /**
   * When true, λ = `lambda` × the largest eigenvalue of each class.
   */
  bool lambda_is_relative;
  double lambda;
} DsfnModel;

typedef struct DsfnEvalConfig {
  size_t way;
  size_t shot;
  size_t query_per_class;
  size_t episode_count;
  struct DsfnModel model;
  double zeta;
  /**
   * Add a jittered copy to 1-shot support sets.
   */
  bool one_shot_jitter;
  /**
   * Jitter standard deviation; values ≤ 0 select the default.
   */
  double jitter_sigma;
  uint64_t master_seed;
  /**
   * Worker threads; 0 uses every core.
   */
  size_t workers;
} DsfnEvalConfig;

typedef struct DsfnEvalReport {
  double accuracy_mean;
  double ci95_halfwidth;
  double mean_loss;
  size_t episode_count;
} DsfnEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failed call on this thread, or null. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *dsfn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dsfn_version(void);

/**
 * Loads a CSV file with rows `label,f1,...,fd`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum DsfnStatus dsfn_dataset_load_csv(const char *path, struct DsfnDataset **out);

/**
 * Generates one of the synthetic presets: `reference`, `small4`, `separable`.
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` valid for writes.
 */
enum DsfnStatus dsfn_dataset_synth(const char *preset, struct DsfnDataset **out);

/**
 * Builds a dataset from `count` row-major feature vectors of length `dim`
 * and one integer label per row.
 *
 * # Safety
 * `labels` must hold `count` values, `features` `count * dim` values, and
 * `out` must be valid for writes.
 */
enum DsfnStatus dsfn_dataset_from_arrays(const uint32_t *labels,
                                         const double *features,
                                         size_t count,
                                         size_t dim,
                                         struct DsfnDataset **out);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `dataset` must come from a `dsfn_dataset_*` constructor and must not be
 * used afterwards.
 */
void dsfn_dataset_free(struct DsfnDataset *dataset);

/**
 * Writes the sample count, feature dimension and class count.
 *
 * # Safety
 * `dataset` must be a live handle; the out pointers may be null.
 */
enum DsfnStatus dsfn_dataset_shape(const struct DsfnDataset *dataset,
                                   size_t *len,
                                   size_t *dim,
                                   size_t *class_count);

/**
 * Default evaluation setup: 5-way 5-shot, 15 queries, 1000 episodes,
 * identity kernel, Tikhonov with λ = 0.1 × the largest class eigenvalue.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DsfnStatus dsfn_eval_config_default(struct DsfnEvalConfig *out);

/**
 * Runs the episodic evaluation. Results depend only on the config and the
 * dataset, never on `workers`.
 *
 * # Safety
 * `dataset` must be a live handle, `config` readable and `out` writable.
 */
enum DsfnStatus dsfn_evaluate(const struct DsfnDataset *dataset,
                              const struct DsfnEvalConfig *config,
                              struct DsfnEvalReport *out);

/**
 * Squared distance between a query and one class given by `count`
 * row-major support vectors of length `dim`.
 *
 * # Safety
 * `support` must hold `count * dim` values, `query` `dim` values, `model`
 * must be readable and `out` writable.
 */
enum DsfnStatus dsfn_class_distance(const double *support,
                                    size_t count,
                                    size_t dim,
                                    const double *query,
                                    const struct DsfnModel *model,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSFN_H */
