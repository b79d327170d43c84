#ifndef SVAM_H
#define SVAM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SvamStatus {
  SVAM_STATUS_OK = 0,
  SVAM_STATUS_NULL_POINTER = 1,
  SVAM_STATUS_INVALID_ARGUMENT = 2,
  SVAM_STATUS_IO = 3,
  SVAM_STATUS_FORMAT = 4,
  SVAM_STATUS_SHAPE = 5,
  SVAM_STATUS_NUMERIC = 6,
  SVAM_STATUS_PANIC = 7,
} SvamStatus;

typedef enum SvamVariant {
  /**
   * Encoder, top-down decoder and refinement.
   */
  SVAM_VARIANT_FULL = 0,
  /**
   * Encoder and bottom-up head.
   */
  SVAM_VARIANT_LIGHT = 1,
} SvamVariant;

/**
 * Network configuration and parameters.
 */
typedef struct SvamModel SvamModel;

/**
 * Decoupled inference pipeline.
 */
typedef struct SvamPipeline SvamPipeline;

/**
 * Per-image scores.
 */
typedef struct SvamMetrics {
  double mae;
  double s_measure;
  double f_beta_max;
} SvamMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *svam_last_error(void);

/**
 * Freshly initialized network with every head enabled. The width scale is
 * `width_num / width_den`.
 *
 * # Safety
 * `out` must be a valid pointer to write a handle into.
 */
enum SvamStatus svam_model_new(size_t input_size,
                               uint32_t width_num,
                               uint32_t width_den,
                               uint64_t seed,
                               struct SvamModel **out);

/**
 * Loads a weight file. Head switches follow the modules stored in the file;
 * geometry must match the given size and width.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SvamStatus svam_model_load(const char *path,
                                size_t input_size,
                                uint32_t width_num,
                                uint32_t width_den,
                                struct SvamModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum SvamStatus svam_model_save(const struct SvamModel *model, const char *path);

/**
 * Trainable scalars used by `variant`.
 *
 * # Safety
 * `model` must come from this library and `out` be valid.
 */
enum SvamStatus svam_model_param_count(const struct SvamModel *model,
                                       enum SvamVariant variant,
                                       size_t *out);

/**
 * # Safety
 * `model` must come from this library or be null, and must not be used
 * afterwards.
 */
void svam_model_free(struct SvamModel *model);

/**
 * Pipeline holding a copy of the parameters `variant` needs. The model may
 * be freed afterwards.
 *
 * # Safety
 * `model` must come from this library and `out` be valid.
 */
enum SvamStatus svam_pipeline_new(const struct SvamModel *model,
                                  enum SvamVariant variant,
                                  struct SvamPipeline **out);

/**
 * Side of the square input the pipeline expects.
 *
 * # Safety
 * `pipeline` must come from this library.
 */
size_t svam_pipeline_input_size(const struct SvamPipeline *pipeline);

/**
 * Saliency map for one `S×S` RGB image in `[0, 1]`, row-major with
 * interleaved channels (`3·S·S` floats). Writes `S·S` values to `out`.
 *
 * # Safety
 * `rgb` must hold `rgb_len` floats and `out` room for `out_len` floats.
 */
enum SvamStatus svam_pipeline_predict(const struct SvamPipeline *pipeline,
                                      const float *rgb,
                                      size_t rgb_len,
                                      float *out,
                                      size_t out_len);

/**
 * # Safety
 * `pipeline` must come from this library or be null, and must not be used
 * afterwards.
 */
void svam_pipeline_free(struct SvamPipeline *pipeline);

/**
 * MAE, S-measure and maximum F-measure of one prediction in `[0, 1]`
 * against a binary mask, both `height·width` row-major.
 *
 * # Safety
 * `pred` and `gt` must each hold `height·width` values; `out` must be valid.
 */
enum SvamStatus svam_metrics(const double *pred,
                             const double *gt,
                             size_t height,
                             size_t width,
                             struct SvamMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVAM_H */
