#ifndef AMLSTM_H
#define AMLSTM_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum AmStatus {
  AM_STATUS_OK = 0,
  AM_STATUS_NULL_POINTER = 1,
  AM_STATUS_INVALID_UTF8 = 2,
  AM_STATUS_DIMENSION = 3,
  AM_STATUS_CONFIG = 4,
  AM_STATUS_NON_FINITE = 5,
  AM_STATUS_FORMAT = 6,
  AM_STATUS_IO = 7,
  AM_STATUS_DIVERGED = 8,
  AM_STATUS_GRAD_CHECK = 9,
  AM_STATUS_BUFFER_TOO_SMALL = 10,
  AM_STATUS_PANIC = 11,
} AmStatus;

/**
 * Opaque dataset handle.
 */
typedef struct AmDataset AmDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct AmModel AmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *am_version(void);

/**
 * Message of the most recent failed call on this thread; empty after a
 * successful call. Valid until the next call on this thread.
 */
const char *am_last_error_message(void);

/**
 * Generates the synthetic dataset described by `config` (`classes`,
 * `samples_per_class`, `noise_sigma`, `seed` and the other generator keys).
 *
 * # Safety
 * `config` is NULL or a NUL-terminated string; `out` is a valid pointer.
 */
enum AmStatus am_dataset_generate(const char *config, struct AmDataset **out);

/**
 * Loads `<base>.manifest` and `<base>.bin`.
 *
 * # Safety
 * `base` is a NUL-terminated path; `out` is a valid pointer.
 */
enum AmStatus am_dataset_load(const char *base, struct AmDataset **out);

/**
 * Writes `<base>.manifest` and `<base>.bin`.
 *
 * # Safety
 * `ds` is a live handle; `base` is a NUL-terminated path.
 */
enum AmStatus am_dataset_save(const struct AmDataset *ds, const char *base);

/**
 * Record count and class count.
 *
 * # Safety
 * `ds` is a live handle; the out pointers are valid or NULL.
 */
enum AmStatus am_dataset_info(const struct AmDataset *ds, size_t *records, size_t *classes);

/**
 * Runs the preprocessing pipeline on raw data (`train_fraction`,
 * `video_components`, `augment` and the other preprocessing keys), producing
 * train and test handles.
 *
 * # Safety
 * `raw` is a live handle; `config` is NULL or a NUL-terminated string;
 * `train_out` and `test_out` are valid pointers.
 */
enum AmStatus am_preprocess(const struct AmDataset *raw,
                            const char *config,
                            struct AmDataset **train_out,
                            struct AmDataset **test_out);

/**
 * # Safety
 * `ds` is NULL or a handle not yet freed.
 */
void am_dataset_free(struct AmDataset *ds);

/**
 * Builds a model shaped by `config` and trains it on `train_set`
 * (`hidden`, `epochs_max`, `learning_rate`, `seed` and the other model and
 * training keys). Returns the best model seen.
 *
 * # Safety
 * `train_set` is a live handle; `config` is NULL or a NUL-terminated string;
 * `out` is a valid pointer.
 */
enum AmStatus am_model_train(const struct AmDataset *train_set,
                             const char *config,
                             struct AmModel **out);

/**
 * # Safety
 * `path` is a NUL-terminated path; `out` is a valid pointer.
 */
enum AmStatus am_model_load(const char *path, struct AmModel **out);

/**
 * # Safety
 * `model` is a live handle; `path` is a NUL-terminated path.
 */
enum AmStatus am_model_save(const struct AmModel *model, const char *path);

/**
 * # Safety
 * `model` is NULL or a handle not yet freed.
 */
void am_model_free(struct AmModel *model);

/**
 * Classification accuracy of the main head. With `video_only` set, the
 * audio stream is replaced by all-zero frames.
 *
 * # Safety
 * `model` and `ds` are live handles; `accuracy` is a valid pointer.
 */
enum AmStatus am_model_evaluate(const struct AmModel *model,
                                const struct AmDataset *ds,
                                bool video_only,
                                double *accuracy);

/**
 * Writes the predicted class of every record into `classes_out`, which must
 * hold at least as many entries as the dataset has records.
 *
 * # Safety
 * `model` and `ds` are live handles; `classes_out` points to `capacity` writable entries.
 */
enum AmStatus am_model_predict(const struct AmModel *model,
                               const struct AmDataset *ds,
                               bool video_only,
                               size_t *classes_out,
                               size_t capacity);

/**
 * Runs the gradient-check suite (`seed`, `gradcheck_seeds`, `corrupt` keys).
 * `max_rel_error` receives the worst relative error even when the check
 * fails, in which case the status is `AM_STATUS_GRAD_CHECK`.
 *
 * # Safety
 * `config` is NULL or a NUL-terminated string; `max_rel_error` is a valid pointer or NULL.
 */
enum AmStatus am_gradcheck(const char *config, double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMLSTM_H */
