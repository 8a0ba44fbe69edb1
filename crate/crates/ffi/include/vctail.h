#ifndef VCTAIL_H
#define VCTAIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. Values 1 to 3 mirror the command-line exit codes.
 */
typedef enum VctailStatus {
  VCTAIL_STATUS_OK = 0,
  VCTAIL_STATUS_USAGE_ERROR = 1,
  VCTAIL_STATUS_DATA_ERROR = 2,
  VCTAIL_STATUS_NUMERICAL_ERROR = 3,
  VCTAIL_STATUS_NULL_POINTER = 4,
  VCTAIL_STATUS_PANIC = 5,
} VctailStatus;

typedef enum VctailKernel {
  /**
   * Product Epanechnikov kernel.
   */
  VCTAIL_KERNEL_EPANECHNIKOV = 0,
  /**
   * Spherically symmetric Epanechnikov kernel.
   */
  VCTAIL_KERNEL_SPHERICAL = 1,
} VctailKernel;

typedef enum VctailNull {
  VCTAIL_NULL_ZERO = 0,
  VCTAIL_NULL_CONSTANT = 1,
} VctailNull;

/**
 * Opaque validated sample.
 */
typedef struct VctailDataset VctailDataset;

/**
 * Opaque coefficient estimates on an equally spaced lattice.
 */
typedef struct VctailGridFit VctailGridFit;

typedef struct VctailTestOutcome {
  double statistic;
  double critical_low;
  double critical_high;
  double p_value;
  /**
   * The constant under the null; zero for the sparsity null.
   */
  double null_value;
  bool rejected;
  size_t skipped_points;
} VctailTestOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vctail_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next fallible call on the same thread.
 */
const char *vctail_last_error_message(void);

/**
 * Stable error kind name (for example `"InsufficientLocalData"`) of the last
 * failed call on this thread, or NULL.
 */
const char *vctail_last_error_kind(void);

/**
 * Builds a dataset from row-major arrays: `y[n]`, `x[n * p]`, `t[n * q]`.
 * With `rescale_t` each smoothing coordinate is mapped onto `[0, 1]`.
 *
 * # Safety
 * The arrays must hold the stated number of values and `out` must be writable.
 */
enum VctailStatus vctail_dataset_new(const double *y,
                                     const double *x,
                                     const double *t,
                                     size_t n,
                                     size_t p,
                                     size_t q,
                                     bool rescale_t,
                                     struct VctailDataset **out);

/**
 * # Safety
 * `dataset` must come from [`vctail_dataset_new`] and not be used afterwards.
 */
void vctail_dataset_free(struct VctailDataset *dataset);

/**
 * Sample size, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t vctail_dataset_n(const struct VctailDataset *dataset);

/**
 * Hill estimate from the responses above `omega`.
 *
 * # Safety
 * `y` must hold `n` values and `out` must be writable.
 */
enum VctailStatus vctail_hill(const double *y, size_t n, double omega, double *out);

/**
 * Threshold leaving `round(fraction * n)` responses strictly above it.
 *
 * # Safety
 * `y` must hold `n` values and `out` must be writable.
 */
enum VctailStatus vctail_threshold_for_fraction(const double *y,
                                                size_t n,
                                                double fraction,
                                                double *out);

/**
 * Fits the coefficient functions on a lattice with `points_per_axis` points
 * per smoothing axis. `bandwidths` holds one value per axis.
 *
 * # Safety
 * `dataset` must be a live handle, `bandwidths` must hold `q` values and
 * `out` must be writable.
 */
enum VctailStatus vctail_fit_grid(const struct VctailDataset *dataset,
                                  enum VctailKernel kernel,
                                  const double *bandwidths,
                                  double threshold,
                                  bool include_intercept,
                                  size_t points_per_axis,
                                  bool parallel,
                                  struct VctailGridFit **out);

/**
 * # Safety
 * `fit` must come from [`vctail_fit_grid`] and not be used afterwards.
 */
void vctail_grid_fit_free(struct VctailGridFit *fit);

/**
 * Number of lattice points, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t vctail_grid_fit_len(const struct VctailGridFit *fit);

/**
 * Number of coefficient functions, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t vctail_grid_fit_coefficients(const struct VctailGridFit *fit);

/**
 * Number of failed lattice points, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t vctail_grid_fit_failed(const struct VctailGridFit *fit);

/**
 * Copies coefficient `j` over the lattice into `values[len]`. `valid[l]` is
 * set to false where the fit failed, in which case `values[l]` is NaN.
 * `len` must equal [`vctail_grid_fit_len`].
 *
 * # Safety
 * `fit` must be a live handle and both outputs must hold `len` entries.
 */
enum VctailStatus vctail_grid_fit_coefficient(const struct VctailGridFit *fit,
                                              size_t j,
                                              double *values,
                                              bool *valid,
                                              size_t len);

/**
 * Copies the coordinates of lattice point `l` into `t[q]`.
 *
 * # Safety
 * `fit` must be a live handle and `t` must hold `q` values.
 */
enum VctailStatus vctail_grid_fit_point(const struct VctailGridFit *fit,
                                        size_t l,
                                        double *t,
                                        size_t q);

/**
 * Sup-deviation test of coefficient `j` against the zero or the constant
 * null at level `alpha`, with the default statistic options.
 *
 * # Safety
 * Both handles must be live, the fit must come from the same dataset and
 * `out` must be writable.
 */
enum VctailStatus vctail_test(const struct VctailDataset *dataset,
                              const struct VctailGridFit *fit,
                              size_t j,
                              enum VctailNull null,
                              double alpha,
                              struct VctailTestOutcome *out);

/**
 * Two-sided Gumbel critical values at level `alpha`.
 *
 * # Safety
 * `low` and `high` must be writable.
 */
enum VctailStatus vctail_critical_values(double alpha, double *low, double *high);

/**
 * `min(G(s), 1 - G(s))` for the standard Gumbel distribution `G`.
 */
double vctail_gumbel_p_value(double statistic);

/**
 * Converts a status into a static description.
 */
const char *vctail_status_name(enum VctailStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCTAIL_H */
