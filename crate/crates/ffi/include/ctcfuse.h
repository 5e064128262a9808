#ifndef CTCFUSE_H
#define CTCFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define CTCFUSE_OK 0

/**
 * A required pointer argument was null.
 */
#define CTCFUSE_ERR_NULL_POINTER 100

/**
 * A string argument was not valid UTF-8.
 */
#define CTCFUSE_ERR_UTF8 101

/**
 * The output buffer is too small; the required length was written.
 */
#define CTCFUSE_ERR_BUFFER_TOO_SMALL 102

/**
 * The library panicked; this is a bug.
 */
#define CTCFUSE_ERR_PANIC 103

/**
 * A trained network loaded from a checkpoint.
 */
typedef struct CtcfuseModel CtcfuseModel;

/**
 * Levenshtein counts between a reference and a hypothesis.
 */
typedef struct CtcfuseEditCounts {
  size_t substitutions;
  size_t deletions;
  size_t insertions;
  size_t reference_len;
  /**
   * `(S + D + I) / N`.
   */
  double error_rate;
  /**
   * `100 (N - S - D - I) / N`.
   */
  double accuracy;
} CtcfuseEditCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a
 * success. Valid until the next call into the library on this thread.
 */
const char *ctcfuse_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ctcfuse_version(void);

/**
 * Loads a checkpoint into a new model handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t ctcfuse_model_load(const char *path, struct CtcfuseModel **out);

/**
 * Releases a handle from [`ctcfuse_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must come from `ctcfuse_model_load` and not be freed twice.
 */
void ctcfuse_model_free(struct CtcfuseModel *model);

/**
 * Feature dimension the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctcfuse_model_input_dim(const struct CtcfuseModel *model);

/**
 * Output classes including the blank; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctcfuse_model_output_dim(const struct CtcfuseModel *model);

/**
 * Runs the network on `num_frames x dim` features and writes the
 * `num_frames x output_dim` posteriorgram to `out_probs`, which must hold
 * `out_capacity` values.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
int32_t ctcfuse_model_posteriors(const struct CtcfuseModel *model,
                                 const double *features,
                                 size_t num_frames,
                                 size_t dim,
                                 double *out_probs,
                                 size_t out_capacity);

/**
 * CTC negative log-likelihood of `labels` (ids in `1..num_classes`) given
 * `num_frames x num_classes` logits; class 0 is the blank.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
int32_t ctcfuse_ctc_loss(const double *logits,
                         size_t num_frames,
                         size_t num_classes,
                         const uint32_t *labels,
                         size_t num_labels,
                         double *out_loss);

/**
 * Best-path decoding of `num_frames x num_classes` posteriors. Writes the
 * collapsed label count to `*out_len`; labels go to `out_labels` when
 * `capacity` suffices, otherwise `CTCFUSE_ERR_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
int32_t ctcfuse_greedy_decode(const double *probs,
                              size_t num_frames,
                              size_t num_classes,
                              uint32_t *out_labels,
                              size_t capacity,
                              size_t *out_len);

/**
 * Unit-cost Levenshtein counts and derived rates.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
int32_t ctcfuse_edit_metrics(const uint32_t *reference,
                             size_t reference_len,
                             const uint32_t *hypothesis,
                             size_t hypothesis_len,
                             struct CtcfuseEditCounts *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTCFUSE_H */
