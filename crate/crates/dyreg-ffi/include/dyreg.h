#ifndef DYREG_H
#define DYREG_H

/* Generated by cbindgen from dyreg-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome. Anything nonzero leaves a message in the thread-local
 * error slot.
 */
typedef enum DyregStatus {
  DYREG_STATUS_OK = 0,
  DYREG_STATUS_NULL_POINTER = 1,
  DYREG_STATUS_INVALID_ARGUMENT = 2,
  DYREG_STATUS_INVALID_CONFIG = 3,
  DYREG_STATUS_IO_ERROR = 4,
  DYREG_STATUS_BAD_FORMAT = 5,
  DYREG_STATUS_INTERNAL = 6,
} DyregStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct DyregConfig DyregConfig;

/**
 * Opaque model with its configuration.
 */
typedef struct DyregModel DyregModel;

/**
 * Opaque generated video sample.
 */
typedef struct DyregSample DyregSample;

/**
 * Aggregate evaluation scores.
 */
typedef struct DyregMetrics {
  double accuracy;
  double dist_p;
  double dist_r;
  double dist_h;
} DyregMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `cap`). Returns the full message length in bytes, 0 when no error is
 * recorded.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be NULL with
 * `cap == 0` to query the length alone.
 */
uintptr_t dyreg_last_error(char *buf, uintptr_t cap);

/**
 * Static library version string.
 */
const char *dyreg_version(void);

/**
 * Parses a full experiment config from JSON. On success the caller owns
 * the handle and must release it with [`dyreg_config_free`].
 *
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string; `out` must be a valid
 * pointer to pointer.
 */
enum DyregStatus dyreg_config_from_json(const char *json, struct DyregConfig **out);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to pointer.
 */
enum DyregStatus dyreg_config_default(struct DyregConfig **out);

/**
 * # Safety
 * `cfg` must come from a dyreg constructor and not have been freed.
 */
void dyreg_config_free(struct DyregConfig *cfg);

/**
 * Number of classification labels the config's dataset produces.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
uint32_t dyreg_config_num_classes(const struct DyregConfig *cfg);

/**
 * Builds a model with deterministic initialization.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` a valid pointer to pointer.
 */
enum DyregStatus dyreg_model_new(const struct DyregConfig *cfg,
                                 uint64_t seed,
                                 struct DyregModel **out);

/**
 * Loads a model from a DYRG checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` a valid pointer to pointer.
 */
enum DyregStatus dyreg_model_load(const char *path, struct DyregModel **out);

/**
 * Writes the model as a DYRG checkpoint (fresh training state).
 *
 * # Safety
 * `model` must be live; `path` NUL-terminated.
 */
enum DyregStatus dyreg_model_save(const struct DyregModel *model, const char *path);

/**
 * # Safety
 * `model` must come from a dyreg constructor and not have been freed.
 */
void dyreg_model_free(struct DyregModel *model);

/**
 * Total scalar parameter count.
 *
 * # Safety
 * `model` must be a live model handle.
 */
uint64_t dyreg_model_param_count(const struct DyregModel *model);

/**
 * Generates the sample identified by `seed` under the config's dataset.
 *
 * # Safety
 * `cfg` must be live; `out` a valid pointer to pointer.
 */
enum DyregStatus dyreg_sample_new(const struct DyregConfig *cfg,
                                  uint64_t seed,
                                  struct DyregSample **out);

/**
 * # Safety
 * `sample` must come from [`dyreg_sample_new`] and not have been freed.
 */
void dyreg_sample_free(struct DyregSample *sample);

/**
 * # Safety
 * `sample` must be a live sample handle.
 */
uint32_t dyreg_sample_label(const struct DyregSample *sample);

/**
 * Frame count, height and width of a sample.
 *
 * # Safety
 * All pointers must be valid; `sample` live.
 */
enum DyregStatus dyreg_sample_dims(const struct DyregSample *sample,
                                   uint32_t *frames,
                                   uint32_t *height,
                                   uint32_t *width);

/**
 * Borrows the sample's pixel buffer: `frames * height * width` floats in
 * `[0, 1]`, valid until the sample is freed.
 *
 * # Safety
 * All pointers must be valid; `sample` live.
 */
enum DyregStatus dyreg_sample_frames(const struct DyregSample *sample,
                                     const float **data,
                                     uintptr_t *len);

/**
 * Runs the model on one sample and writes class logits into `logits`.
 * `cap` must be at least the class count.
 *
 * # Safety
 * Handles must be live; `logits` must point to `cap` writable floats.
 */
enum DyregStatus dyreg_model_predict(const struct DyregModel *model,
                                     const struct DyregSample *sample,
                                     float *logits,
                                     uintptr_t cap);

/**
 * Writes the first region trace as `frames * nodes * 4` floats
 * `(cx, cy, w, h)` in normalized coordinates.
 *
 * # Safety
 * Handles must be live; `out` must point to `cap` writable floats.
 */
enum DyregStatus dyreg_model_trace(const struct DyregModel *model,
                                   const struct DyregSample *sample,
                                   float *out,
                                   uintptr_t cap);

/**
 * Evaluates accuracy and region distances on `n_samples` fixed-seed
 * samples.
 *
 * # Safety
 * `model` must be live; `out` a valid metrics pointer.
 */
enum DyregStatus dyreg_model_evaluate(const struct DyregModel *model,
                                      uint32_t n_samples,
                                      uint64_t seed_base,
                                      struct DyregMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYREG_H */
