#ifndef ERRORNET_H
#define ERRORNET_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ErrornetStatus {
  ERRORNET_STATUS_OK = 0,
  ERRORNET_STATUS_NULL_POINTER = 1,
  ERRORNET_STATUS_INVALID_ARGUMENT = 2,
  ERRORNET_STATUS_CONFIG = 3,
  ERRORNET_STATUS_DATA = 4,
  ERRORNET_STATUS_IO = 5,
  ERRORNET_STATUS_FORMAT = 6,
  ERRORNET_STATUS_NUMERICAL = 7,
  ERRORNET_STATUS_PANIC = 8,
} ErrornetStatus;

/**
 * A loaded segmentation pipeline, optionally with an error predictor.
 */
typedef struct ErrornetPipeline ErrornetPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *errornet_last_error(void);

/**
 * Loads a trained run. `variant` is one of `base`, `err-pred`,
 * `err-pred+vae`, `errornet`, or null for `errornet`.
 *
 * # Safety
 * `run_dir` and a non-null `variant` must be NUL-terminated strings; `out`
 * must be a valid pointer.
 */
enum ErrornetStatus errornet_pipeline_load(const char *run_dir,
                                           const char *variant,
                                           struct ErrornetPipeline **out);

/**
 * # Safety
 * `p` must come from [`errornet_pipeline_load`] and not be used afterwards.
 */
void errornet_pipeline_free(struct ErrornetPipeline *p);

/**
 * Side length of the square images the pipeline expects, or 0 for null.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
uint32_t errornet_pipeline_resolution(const struct ErrornetPipeline *p);

/**
 * Whether the pipeline can correct (has an error predictor).
 *
 * # Safety
 * `p` must be null or a live handle.
 */
bool errornet_pipeline_can_correct(const struct ErrornetPipeline *p);

/**
 * Segments one `R x R` row-major image of intensities in `[0, 1]`.
 * `fov` may be null (whole image). Writes the probability map to
 * `out_prob`; with `correct`, the corrected map `clamp(S + E, 0, 1)`.
 *
 * # Safety
 * `image`, `out_prob` and a non-null `fov` must each hold `len` floats.
 */
enum ErrornetStatus errornet_pipeline_segment(struct ErrornetPipeline *p,
                                              const float *image,
                                              const float *fov,
                                              size_t len,
                                              bool correct,
                                              float *out_prob);

/**
 * Dice of two binary masks over `len` pixels, restricted to `fov` when it
 * is non-null. Returns NaN for null masks.
 *
 * # Safety
 * Non-null pointers must each hold `len` floats.
 */
double errornet_dice(const float *a, const float *b, const float *fov, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERRORNET_H */
