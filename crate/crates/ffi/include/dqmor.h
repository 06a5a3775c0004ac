/* SPDX-License-Identifier: Apache-2.0 */

#ifndef DQMOR_H
#define DQMOR_H

/* Generated by cbindgen. Do not edit by hand. */

#include <stdbool.h>
#include <stddef.h>

/**
 * Result codes shared by all functions.
 */
typedef enum DqmorStatus {
  DQMOR_STATUS_OK = 0,
  DQMOR_STATUS_NULL_POINTER = 1,
  DQMOR_STATUS_INVALID_ARGUMENT = 2,
  DQMOR_STATUS_IO = 3,
  DQMOR_STATUS_PARSE = 4,
  DQMOR_STATUS_VERSION_MISMATCH = 5,
  DQMOR_STATUS_MALFORMED_CHECKPOINT = 6,
  DQMOR_STATUS_DEGENERATE_ENCODING = 7,
  DQMOR_STATUS_BUFFER_TOO_SMALL = 8,
  DQMOR_STATUS_INTERNAL = 99,
} DqmorStatus;

/**
 * Which estimator a loaded model holds.
 */
typedef enum DqmorModelKind {
  DQMOR_MODEL_KIND_QMR = 0,
  DQMOR_MODEL_KIND_DMKDC = 1,
} DqmorModelKind;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct DqmorModel DqmorModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dqmor_version(void);

/**
 * Message for the most recent failure on this thread, or null if the last
 * call succeeded. Valid until the next call into the library on this thread.
 */
const char *dqmor_last_error_message(void);

/**
 * Loads a checkpoint file. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DqmorStatus dqmor_model_load(const char *path, struct DqmorModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dqmor_model_load`] and not be freed twice.
 */
void dqmor_model_free(struct DqmorModel *model);

/**
 * Raw feature dimension the model expects.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum DqmorStatus dqmor_model_input_dim(const struct DqmorModel *model, size_t *out);

/**
 * Number of grades N; posterior buffers need this many slots.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum DqmorStatus dqmor_model_num_grades(const struct DqmorModel *model, size_t *out);

/**
 * Estimator family of the handle.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum DqmorStatus dqmor_model_kind(const struct DqmorModel *model, enum DqmorModelKind *out);

/**
 * Encodes one patch and writes its grade posterior into `probs`.
 *
 * `degenerate` (optional) is set when the measurement collapsed and the
 * uniform distribution was returned.
 *
 * # Safety
 * `features` must hold `num_features` values, `probs` must hold
 * `probs_len` slots, `degenerate` may be null.
 */
enum DqmorStatus dqmor_predict_patch(const struct DqmorModel *model,
                                     const double *features,
                                     size_t num_features,
                                     double *probs,
                                     size_t probs_len,
                                     bool *degenerate);

/**
 * Averages `num_patches` row-major posteriors of width `num_grades`.
 *
 * # Safety
 * `probs` must hold `num_patches * num_grades` values and `out` at least
 * `num_grades` slots.
 */
enum DqmorStatus dqmor_probability_vote(const double *probs,
                                        size_t num_patches,
                                        size_t num_grades,
                                        double *out,
                                        size_t out_len);

/**
 * Most frequent grade, ties toward the higher grade.
 *
 * # Safety
 * `grades` must hold `num_patches` values; `out` must be writable.
 */
enum DqmorStatus dqmor_majority_vote(const size_t *grades,
                                     size_t num_patches,
                                     size_t num_grades,
                                     size_t *out);

/**
 * Summary statistics of one posterior. Any output pointer may be null.
 *
 * # Safety
 * `probs` must hold `num_grades` values.
 */
enum DqmorStatus dqmor_posterior_stats(const double *probs,
                                       size_t num_grades,
                                       double *expected,
                                       double *variance,
                                       size_t *argmax);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DQMOR_H */
