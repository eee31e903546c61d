#ifndef INCRLEARN_H
#define INCRLEARN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IclStatus {
  ICL_STATUS_OK = 0,
  ICL_STATUS_NULL_POINTER = 1,
  ICL_STATUS_INVALID_ARGUMENT = 2,
  ICL_STATUS_IO = 3,
  ICL_STATUS_PARSE = 4,
  ICL_STATUS_SHAPE = 5,
  ICL_STATUS_BUDGET = 6,
  ICL_STATUS_SCHEDULE = 7,
  ICL_STATUS_NO_CLASSES = 8,
  ICL_STATUS_DIVERGED = 9,
  ICL_STATUS_CHECKPOINT = 10,
  ICL_STATUS_INTERNAL = 11,
} IclStatus;

/**
 * A dataset with per-class train and test samples.
 */
typedef struct IclDataset IclDataset;

/**
 * A learner state plus the strategy and training settings that drive it.
 */
typedef struct IclLearner IclLearner;

/**
 * Training settings passed across the boundary.
 */
typedef struct IclTrainOptions {
  size_t epochs;
  size_t minibatch_size;
  double learning_rate;
  double lr_drop_factor;
  double weight_decay;
  uint64_t shuffle_seed;
} IclTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *icl_last_error(void);

/**
 * Defaults: 70 epochs, minibatch 128, learning rate 2.0 divided by 5 at
 * 7/10 and 9/10 of training, weight decay 1e-5.
 */
struct IclTrainOptions icl_train_options_default(void);

/**
 * Gaussian-mixture dataset; class labels are `c0`, `c1`, ...
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum IclStatus icl_dataset_synthetic(size_t classes,
                                     size_t dim,
                                     size_t modes_per_class,
                                     double separation,
                                     double noise,
                                     size_t train_per_class,
                                     size_t test_per_class,
                                     uint64_t seed,
                                     struct IclDataset **out);

/**
 * Loads a delimited file with `label` and `split` columns.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as for [`icl_dataset_synthetic`].
 */
enum IclStatus icl_dataset_load(const char *path, char delimiter, struct IclDataset **out);

/**
 * # Safety
 * `ds` must be null or a handle from this library.
 */
size_t icl_dataset_num_classes(const struct IclDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle from this library.
 */
size_t icl_dataset_input_dim(const struct IclDataset *ds);

/**
 * Copies test sample `index` of dataset class `class` into `x` (length `len`).
 *
 * # Safety
 * `ds` must be a handle from this library and `x` must point to `len` writable doubles.
 */
enum IclStatus icl_dataset_test_sample(const struct IclDataset *ds,
                                       size_t class_,
                                       size_t index,
                                       double *x,
                                       size_t len);

/**
 * Number of test samples of dataset class `class` (0 if out of range).
 *
 * # Safety
 * `ds` must be null or a handle from this library.
 */
size_t icl_dataset_test_count(const struct IclDataset *ds, size_t class_);

/**
 * # Safety
 * `ds` must be null or a handle from this library not freed before.
 */
void icl_dataset_free(struct IclDataset *ds);

/**
 * Creates a learner for the named strategy (`icarl`, `finetuning`, ...).
 * `memory_k` is ignored by strategies that keep no exemplars.
 *
 * # Safety
 * `strategy` must be a NUL-terminated string, `hidden` must point to
 * `hidden_len` values, `options` must be valid, and `out` writable.
 */
enum IclStatus icl_learner_new(const char *strategy,
                               size_t input_dim,
                               const size_t *hidden,
                               size_t hidden_len,
                               size_t feature_dim,
                               size_t memory_k,
                               uint64_t seed,
                               const struct IclTrainOptions *options,
                               struct IclLearner **out);

/**
 * Trains one incremental step on dataset classes `classes[0..n]`.
 *
 * # Safety
 * Handles must come from this library; `classes` must point to `n` values.
 */
enum IclStatus icl_learner_train_classes(struct IclLearner *learner,
                                         const struct IclDataset *ds,
                                         const size_t *classes,
                                         size_t n);

/**
 * Trains one incremental step on raw samples. Class `i` is named
 * `labels[i]` and owns `counts[i]` consecutive rows of `samples`, each of
 * the learner's input dimension.
 *
 * # Safety
 * `labels` must hold `n` NUL-terminated strings, `counts` `n` values, and
 * `samples` `sum(counts) * input_dim` doubles.
 */
enum IclStatus icl_learner_train_batch(struct IclLearner *learner,
                                       const char *const *labels,
                                       const size_t *counts,
                                       size_t n,
                                       const double *samples);

/**
 * Predicts the internal class id (arrival order) of `x`.
 *
 * # Safety
 * `learner` must be a handle from this library, `x` must point to `len`
 * doubles and `out_class` must be writable.
 */
enum IclStatus icl_learner_predict(const struct IclLearner *learner,
                                   const double *x,
                                   size_t len,
                                   size_t *out_class);

/**
 * Number of classes learned so far.
 *
 * # Safety
 * `learner` must be null or a handle from this library.
 */
size_t icl_learner_num_classes(const struct IclLearner *learner);

/**
 * Copies the label of internal class `id` into `buf` as a NUL-terminated
 * string. `out_len` receives the label length without the NUL; when the
 * buffer is too small nothing is copied and `InvalidArgument` is returned.
 *
 * # Safety
 * `buf` must point to `buf_len` writable bytes, `out_len` must be writable.
 */
enum IclStatus icl_learner_class_label(const struct IclLearner *learner,
                                       size_t id,
                                       char *buf,
                                       size_t buf_len,
                                       size_t *out_len);

/**
 * # Safety
 * `learner` must be a handle from this library and `path` NUL-terminated.
 */
enum IclStatus icl_learner_save(const struct IclLearner *learner, const char *path);

/**
 * Loads a checkpoint. Strategy and training settings are not stored in
 * checkpoints and must be given again.
 *
 * # Safety
 * Strings must be NUL-terminated, `options` valid and `out` writable.
 */
enum IclStatus icl_learner_load(const char *path,
                                const char *strategy,
                                const struct IclTrainOptions *options,
                                struct IclLearner **out);

/**
 * # Safety
 * `learner` must be null or a handle from this library not freed before.
 */
void icl_learner_free(struct IclLearner *learner);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INCRLEARN_H */
