#ifndef CAME_H
#define CAME_H

/* Generated by cbindgen from came-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Fit method selector for [`came_fit_linear`].
typedef enum CameFitMethod {
  CameFitMethod_Ols = 0,
  CameFitMethod_Huber = 1,
} CameFitMethod;

// Status codes returned by every fallible function.
typedef enum CameStatus {
  CameStatus_Ok = 0,
  CameStatus_NullArgument = 1,
  CameStatus_InvalidArgument = 2,
  CameStatus_DegenerateInput = 3,
  CameStatus_IoError = 4,
  CameStatus_Internal = 5,
} CameStatus;

// Opaque fitted regressor.
typedef struct CameFit CameFit;

// Opaque trained model loaded from a checkpoint.
typedef struct CameModel CameModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The last error message on this thread; valid until the next failing call
// on the same thread. Never null.
const char *came_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *came_version(void);

// Pearson correlation of two equal-length arrays.
//
// # Safety
// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
enum CameStatus came_pearson(const double *xs, const double *ys, size_t n, double *out);

// Spearman rank correlation of two equal-length arrays.
//
// # Safety
// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
enum CameStatus came_spearman(const double *xs, const double *ys, size_t n, double *out);

// Mean absolute error between two equal-length arrays.
//
// # Safety
// `pred` and `truth` must point to `n` readable doubles; `out` writable.
enum CameStatus came_mae(const double *pred, const double *truth, size_t n, double *out);

// Fit `acc_cla = slope * acc_con + intercept` on `n` accuracy pairs
// (fractions in [0, 1]). On success writes a heap handle into `out`.
//
// # Safety
// `acc_con`/`acc_cla` must point to `n` readable doubles; `out` writable.
enum CameStatus came_fit_linear(const double *acc_con,
                                const double *acc_cla,
                                size_t n,
                                enum CameFitMethod method,
                                struct CameFit **out);

// Release a fit handle. Null is a no-op.
//
// # Safety
// `fit` must be a handle from [`came_fit_linear`] (or null), not yet freed.
void came_fit_free(struct CameFit *fit);

// Read slope, intercept and the correlation statistics of a fit. Any output
// pointer may be null to skip that field.
//
// # Safety
// `fit` must be a live handle; non-null outputs must be writable.
enum CameStatus came_fit_params(const struct CameFit *fit,
                                double *slope,
                                double *intercept,
                                double *pearson_r,
                                double *spearman_rho);

// Predict classification accuracy from contrastive accuracy. The prediction
// is clamped to [0, 1]; `clamped`/`extrapolated` flags may be null.
//
// # Safety
// `fit` must be a live handle; non-null outputs must be writable.
enum CameStatus came_fit_predict(const struct CameFit *fit,
                                 double acc_con,
                                 double *out_value,
                                 int32_t *out_clamped,
                                 int32_t *out_extrapolated);

// Serialize a fit to a JSON file.
//
// # Safety
// `fit` must be a live handle; `path` a NUL-terminated UTF-8 string.
enum CameStatus came_fit_save_json(const struct CameFit *fit, const char *path);

// Load a fit previously saved with [`came_fit_save_json`].
//
// # Safety
// `path` must be NUL-terminated UTF-8; `out` writable.
enum CameStatus came_fit_load_json(const char *path, struct CameFit **out);

// Load a trained model from a checkpoint file.
//
// # Safety
// `path` must be NUL-terminated UTF-8; `out` writable.
enum CameStatus came_model_load(const char *path, struct CameModel **out);

// Release a model handle. Null is a no-op.
//
// # Safety
// `model` must be a handle from [`came_model_load`] (or null), not yet freed.
void came_model_free(struct CameModel *model);

// Basic model geometry: class count, expected input channels/height/width.
// Any output may be null.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum CameStatus came_model_info(const struct CameModel *model,
                                size_t *num_classes,
                                size_t *channels,
                                size_t *height,
                                size_t *width);

// Classification accuracy of the model on `n` images (NCHW f32 in [0, 1])
// with labels in [0, num_classes).
//
// # Safety
// `images` must hold `n*c*h*w` floats, `labels` `n` entries; `out` writable.
enum CameStatus came_model_classification_accuracy(const struct CameModel *model,
                                                   const float *images,
                                                   size_t n,
                                                   size_t c,
                                                   size_t h,
                                                   size_t w,
                                                   const uint32_t *labels,
                                                   double *out);

// Contrastive accuracy of the model on `n` unlabeled images (NCHW f32),
// evaluated in batches of `batch_n` under the model's default view policy.
//
// # Safety
// `images` must hold `n*c*h*w` readable floats; `out` must be writable.
enum CameStatus came_model_contrastive_accuracy(const struct CameModel *model,
                                                const float *images,
                                                size_t n,
                                                size_t c,
                                                size_t h,
                                                size_t w,
                                                size_t batch_n,
                                                uint64_t seed,
                                                double *out);

// Softmax probabilities for `n` images; writes `n * num_classes` doubles
// row-major into `out_probs`.
//
// # Safety
// `images` must hold `n*c*h*w` floats and `out_probs` room for
// `n * num_classes` doubles.
enum CameStatus came_model_softmax(const struct CameModel *model,
                                   const float *images,
                                   size_t n,
                                   size_t c,
                                   size_t h,
                                   size_t w,
                                   double *out_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAME_H */
