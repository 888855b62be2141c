/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef IRSFL_H
#define IRSFL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  IRSFL_STATUS_OK = 0,
  IRSFL_STATUS_NULL_POINTER = 1,
  IRSFL_STATUS_INVALID_ARGUMENT = 2,
  IRSFL_STATUS_CONFIG = 3,
  IRSFL_STATUS_IO = 4,
  IRSFL_STATUS_FORMAT = 5,
  IRSFL_STATUS_NUMERIC = 6,
  /**
   * A caller-provided buffer has the wrong length.
   */
  IRSFL_STATUS_BUFFER_SIZE = 7,
  IRSFL_STATUS_PANIC = 8,
} IrsflStatus;

/**
 * A generated dataset; samples are indexed user by user.
 */
typedef struct IrsflDataset IrsflDataset;

/**
 * A trained network loaded from a checkpoint file.
 */
typedef struct IrsflModel IrsflModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *irsfl_last_error_message(void);

/**
 * Symbols uploaded when every user ships its raw dataset to the server.
 *
 * # Safety
 * `out` must be null or point to writable storage for one `u64`.
 */
IrsflStatus irsfl_overhead_cl(uint64_t m_bar,
                              uint64_t m,
                              uint64_t l,
                              uint64_t samples,
                              uint64_t *out);

/**
 * Symbols exchanged by federated training: one upload and one download of
 * `parameters` values per user per round.
 *
 * # Safety
 * `out` must be null or point to writable storage for one `u64`.
 */
IrsflStatus irsfl_overhead_fl(uint64_t parameters, uint64_t rounds, uint64_t users, uint64_t *out);

/**
 * Transmitted-parameter count of the standard ten-layer network for `m`
 * antennas, `l` IRS elements and `m_bar` pilots.
 *
 * # Safety
 * `out` must be null or point to writable storage for one `u64`.
 */
IrsflStatus irsfl_standard_parameter_count(size_t m, size_t l, size_t m_bar, uint64_t *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be null or writable.
 */
IrsflStatus irsfl_model_load(const char *path, IrsflModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`irsfl_model_load`] not yet freed.
 */
void irsfl_model_free(IrsflModel *model);

/**
 * Length of the network input `3 (L + 1) M̄`; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t irsfl_model_input_len(const IrsflModel *model);

/**
 * Length of the predicted label `2 M (L + 1)`; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t irsfl_model_output_len(const IrsflModel *model);

/**
 * Predicts the channel label for one raw input tensor (the layout stored in
 * datasets). Scaling to and from network units is applied internally.
 *
 * # Safety
 * `model` must be a live handle; `input` and `output` must be valid for
 * `input_len` and `output_len` doubles.
 */
IrsflStatus irsfl_model_predict(const IrsflModel *model,
                                const double *input,
                                size_t input_len,
                                double *output,
                                size_t output_len);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be null or writable.
 */
IrsflStatus irsfl_dataset_load(const char *path, IrsflDataset **out);

/**
 * # Safety
 * `dataset` must be null or a handle from [`irsfl_dataset_load`] not yet freed.
 */
void irsfl_dataset_free(IrsflDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t irsfl_dataset_len(const IrsflDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t irsfl_dataset_users(const IrsflDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t irsfl_dataset_input_len(const IrsflDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t irsfl_dataset_label_len(const IrsflDataset *dataset);

/**
 * Copies sample `index` into the caller's buffers. `user` and `snr_db` may be
 * null.
 *
 * # Safety
 * `dataset` must be a live handle; buffers must be valid for the given
 * lengths; `user` and `snr_db` must be null or writable.
 */
IrsflStatus irsfl_dataset_sample(const IrsflDataset *dataset,
                                 size_t index,
                                 double *input,
                                 size_t input_len,
                                 double *label,
                                 size_t label_len,
                                 size_t *user,
                                 double *snr_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRSFL_H */
