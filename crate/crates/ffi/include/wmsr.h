#ifndef WMSR_H
#define WMSR_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum WmsrStatus {
  WMSR_STATUS_OK = 0,
  WMSR_STATUS_NULL_POINTER = 1,
  WMSR_STATUS_INVALID_ARGUMENT = 2,
  WMSR_STATUS_SHAPE = 3,
  WMSR_STATUS_DATA = 4,
  WMSR_STATUS_NUMERIC = 5,
  WMSR_STATUS_IO = 6,
  WMSR_STATUS_PANIC = 7,
} WmsrStatus;

/**
 * Opaque model handle.
 */
typedef struct WmsrModelHandle WmsrModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *wmsr_last_error(void);

/**
 * Fresh model from `key = value` configuration text (NUL-terminated).
 *
 * # Safety
 * `config` must be a valid C string and `out` a valid pointer.
 */
enum WmsrStatus wmsr_model_new(const char *config, struct WmsrModelHandle **out);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum WmsrStatus wmsr_model_load(const char *path, struct WmsrModelHandle **out);

/**
 * Write the model's weights as a checkpoint file.
 *
 * # Safety
 * `model` must come from this library and `path` be a valid C string.
 */
enum WmsrStatus wmsr_model_save(const struct WmsrModelHandle *model, const char *path);

/**
 * New handle whose difference-convolution gates are collapsed to single
 * kernels; `model` is left unchanged.
 *
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum WmsrStatus wmsr_model_fuse(const struct WmsrModelHandle *model, struct WmsrModelHandle **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void wmsr_model_free(struct WmsrModelHandle *model);

/**
 * Upscaling factor, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint32_t wmsr_model_scale(const struct WmsrModelHandle *model);

/**
 * Number of scalar weights, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint64_t wmsr_model_parameter_count(const struct WmsrModelHandle *model);

/**
 * 1 if the gates are fused, 0 if branched or the handle is null.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
int32_t wmsr_model_is_fused(const struct WmsrModelHandle *model);

/**
 * Super-resolve one row-major `height × width` field with values in
 * `[0, 1]`. `output` must hold `out_len = (r·height)·(r·width)` values.
 *
 * # Safety
 * `input` must point to `height·width` doubles and `output` to `out_len`.
 */
enum WmsrStatus wmsr_model_predict(const struct WmsrModelHandle *model,
                                   const double *input,
                                   size_t height,
                                   size_t width,
                                   double *output,
                                   size_t out_len);

/**
 * PSNR in dB of two equally long buffers against `peak`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out` must be valid.
 */
enum WmsrStatus wmsr_psnr(const double *a, const double *b, size_t len, double peak, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WMSR_H */
