#ifndef GMSP_H
#define GMSP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function in this interface.
 */
typedef enum {
  GMSP_STATUS_OK = 0,
  GMSP_STATUS_NULL_POINTER = 1,
  GMSP_STATUS_INVALID_ARGUMENT = 2,
  GMSP_STATUS_OUT_OF_BOUNDS = 3,
  GMSP_STATUS_DIMENSION_MISMATCH = 4,
  GMSP_STATUS_NOT_CONVERGED = 5,
  GMSP_STATUS_TOO_MANY_DROPPED = 6,
  GMSP_STATUS_NUMERICAL = 7,
  GMSP_STATUS_BUFFER_TOO_SMALL = 8,
  GMSP_STATUS_PANIC = 9,
} GmspStatus;

/**
 * An immutable set of observations.
 */
typedef struct GmspCloud GmspCloud;

/**
 * A model family such as `normal`, `mvnormal:3` or `mixture:2:1`.
 */
typedef struct GmspModel GmspModel;

/**
 * Summary of a fit; parameters are written to a caller-supplied buffer.
 */
typedef struct {
  double score;
  size_t iterations;
  size_t converged_starts;
  size_t dropped;
} GmspFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *gmsp_status_string(GmspStatus status);

/**
 * Message for the last failure on this thread. The pointer stays valid until
 * the next call into this library from the same thread.
 */
const char *gmsp_last_error(void);

/**
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
GmspStatus gmsp_model_new(const char *name, GmspModel **out);

/**
 * # Safety
 * `model` must come from [`gmsp_model_new`] and not be used afterwards.
 */
void gmsp_model_free(GmspModel *model);

/**
 * Number of parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t gmsp_model_n_params(const GmspModel *model);

/**
 * Observation dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t gmsp_model_dim(const GmspModel *model);

/**
 * Density at `x` (length `dim`) under parameters `theta` (length `n_params`).
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
GmspStatus gmsp_model_density(const GmspModel *model,
                              const double *theta,
                              size_t n_params,
                              const double *x,
                              size_t dim,
                              double *out);

/**
 * Draw `n` observations into `out` (row-major, `n * dim` values).
 *
 * # Safety
 * `theta` must hold `n_params` values and `out` must hold `out_len`.
 */
GmspStatus gmsp_model_sample(const GmspModel *model,
                             const double *theta,
                             size_t n_params,
                             size_t n,
                             uint64_t seed,
                             double *out,
                             size_t out_len);

/**
 * Copy `n * dim` row-major coordinates into a new point cloud.
 *
 * # Safety
 * `data` must hold `n * dim` values and `out` must be valid.
 */
GmspStatus gmsp_cloud_new(const double *data, size_t n, size_t dim, GmspCloud **out);

/**
 * # Safety
 * `cloud` must come from [`gmsp_cloud_new`] and not be used afterwards.
 */
void gmsp_cloud_free(GmspCloud *cloud);

/**
 * Number of observations, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t gmsp_cloud_len(const GmspCloud *cloud);

/**
 * Spacing score `S_n(θ)` for divergence `h` (e.g. `"h1"`, `"h5:0.5"`).
 *
 * # Safety
 * Handles must be live; `theta` must hold `n_params` values.
 */
GmspStatus gmsp_score(const GmspModel *model,
                      const GmspCloud *cloud,
                      const char *h,
                      const double *theta,
                      size_t n_params,
                      double *out);

/**
 * Fit the model; the estimate is written to `theta_out` (length `n_params`).
 *
 * On [`GmspStatus::NotConverged`] the best point found is still written.
 *
 * # Safety
 * Handles must be live; `theta_out` must hold `n_params` values; `fit` may be null.
 */
GmspStatus gmsp_fit(const GmspModel *model,
                    const GmspCloud *cloud,
                    const char *h,
                    uint64_t seed,
                    double *theta_out,
                    size_t n_params,
                    GmspFit *fit);

/**
 * Asymptotic variance constant `σ_q² / b_h²` in dimension `d`.
 *
 * # Safety
 * `h` must be a NUL-terminated string and `out` a valid pointer.
 */
GmspStatus gmsp_variance_constant(const char *h, size_t d, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GMSP_H */
