#ifndef SPATIAL_RIDGE_H
#define SPATIAL_RIDGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call.
 */
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  /**
   * Null pointer, zero size or out-of-range argument.
   */
  SR_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Non-finite or inconsistent data.
   */
  SR_STATUS_INPUT = 2,
  /**
   * A site or query point lies outside the region.
   */
  SR_STATUS_OUT_OF_REGION = 3,
  /**
   * The Gram matrix is singular; use a positive ridge penalty.
   */
  SR_STATUS_SINGULAR_GRAM = 4,
  /**
   * Numerical failure, such as a negative variance beyond tolerance.
   */
  SR_STATUS_NUMERICAL = 5,
  /**
   * Unexpected internal failure (a caught panic).
   */
  SR_STATUS_INTERNAL = 6,
} SrStatus;

/**
 * A fitted trend surface together with its data.
 */
typedef struct SrFit SrFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fits a trend surface with a uniform tensor B-spline basis.
 *
 * `sites` holds `n * d` raw coordinates, `y` holds `n` responses, `scales`
 * the `d` region side lengths, `offset` the region center (null for the
 * origin) and `interior_knots` the `d` knot counts. On success `*out`
 * receives a handle to free with `sr_fit_free`.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `out` must be writable.
 */
enum SrStatus sr_fit_trend(const double *sites,
                           size_t n,
                           size_t d,
                           const double *y,
                           const double *scales,
                           const double *offset,
                           size_t degree,
                           const size_t *interior_knots,
                           double ridge,
                           struct SrFit **out);

/**
 * Total number of basis functions of a fit, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t sr_fit_dimension(const struct SrFit *fit);

/**
 * Evaluates the fitted surface at `m` raw points (`m * d` values) into `out`.
 *
 * # Safety
 * `fit` must be a live handle; buffers must be valid for the stated lengths.
 */
enum SrStatus sr_fit_predict(const struct SrFit *fit, const double *points, size_t m, double *out);

/**
 * Pointwise confidence intervals at `m` raw points with Bartlett HAC
 * bandwidths `bandwidth_fraction * A_j`. Each output buffer holds `m` values.
 *
 * # Safety
 * `fit` must be a live handle; buffers must be valid for the stated lengths.
 */
enum SrStatus sr_fit_confidence_band(const struct SrFit *fit,
                                     const double *points,
                                     size_t m,
                                     double level,
                                     double bandwidth_fraction,
                                     double *estimate,
                                     double *se,
                                     double *lower,
                                     double *upper);

/**
 * Serializes the fit artifact as JSON into `*out`; release it with
 * `sr_string_free`.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum SrStatus sr_fit_to_json(const struct SrFit *fit, char **out);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or come from `sr_fit_to_json`, and not be freed twice.
 */
void sr_string_free(char *s);

/**
 * Frees a fit handle. Null is ignored.
 *
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void sr_fit_free(struct SrFit *fit);

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sr_last_error_message(void);

/**
 * Standard normal quantile: -inf at 0, +inf at 1, NaN outside [0, 1].
 */
double sr_normal_quantile(double p);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sr_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPATIAL_RIDGE_H */
