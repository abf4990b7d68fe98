#ifndef ODEFIT_H
#define ODEFIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum OdefitStatus {
  ODEFIT_STATUS_OK = 0,
  /**
   * Invalid input: bad arguments, malformed files, violated preconditions.
   */
  ODEFIT_STATUS_INVALID = 1,
  /**
   * The solver diverged or a linear system could not be used.
   */
  ODEFIT_STATUS_NUMERICAL = 2,
  ODEFIT_STATUS_IO = 3,
  /**
   * A null pointer was passed, or the library panicked.
   */
  ODEFIT_STATUS_INTERNAL = -1,
} OdefitStatus;

/**
 * Simulation scenarios for the HIV model.
 */
typedef enum OdefitScenario {
  ODEFIT_SCENARIO_I = 1,
  ODEFIT_SCENARIO_II = 2,
  ODEFIT_SCENARIO_III = 3,
  ODEFIT_SCENARIO_IV = 4,
  ODEFIT_SCENARIO_COMPLEX = 5,
} OdefitScenario;

/**
 * Representation of the infection rate `eta` in a fit.
 */
typedef enum OdefitEtaMode {
  ODEFIT_ETA_MODE_CONSTANT = 0,
  ODEFIT_ETA_MODE_SPLINE = 1,
  ODEFIT_ETA_MODE_CENTERED_SPLINE = 2,
} OdefitEtaMode;

/**
 * Opaque dataset handle.
 */
typedef struct OdefitDataset OdefitDataset;

/**
 * Opaque fit-result handle.
 */
typedef struct OdefitReport OdefitReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *odefit_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *odefit_version(void);

/**
 * Simulate the HIV design for `scenario`: 40 times on (0, 20],
 * proportional noise of `noise_fraction`, both outputs stored as logs.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum OdefitStatus odefit_simulate(enum OdefitScenario scenario,
                                  double noise_fraction,
                                  uint64_t seed,
                                  struct OdefitDataset **out);

/**
 * Read a dataset CSV (and its `.meta` sidecar when present).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OdefitStatus odefit_dataset_read(const char *path, struct OdefitDataset **out);

/**
 * Write a dataset CSV and its `.meta` sidecar.
 *
 * # Safety
 * `dataset` must be a live handle; `path` a NUL-terminated string.
 */
enum OdefitStatus odefit_dataset_write(const struct OdefitDataset *dataset, const char *path);

/**
 * Number of observation times, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t odefit_dataset_len(const struct OdefitDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void odefit_dataset_free(struct OdefitDataset *dataset);

/**
 * Fit the HIV model with free (lambda, N, c) and `eta` represented by
 * `mode`. `order` and `interior_knots` are ignored for a constant fit.
 *
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
enum OdefitStatus odefit_fit(const struct OdefitDataset *dataset,
                             enum OdefitEtaMode mode,
                             size_t order,
                             size_t interior_knots,
                             double h,
                             uint64_t seed,
                             struct OdefitReport **out);

/**
 * Number of estimated scalars, or 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t odefit_report_n_params(const struct OdefitReport *report);

/**
 * Name of estimate `i`; null when out of range. Owned by the report.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
const char *odefit_report_param_name(const struct OdefitReport *report, size_t i);

/**
 * Estimate `i`.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum OdefitStatus odefit_report_param(const struct OdefitReport *report, size_t i, double *out);

/**
 * Residual sum of squares on the fitting scale.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum OdefitStatus odefit_report_rss(const struct OdefitReport *report, double *out);

/**
 * AICc of the fit.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum OdefitStatus odefit_report_aicc(const struct OdefitReport *report, double *out);

/**
 * Number of points on the fitted `eta` curve.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t odefit_report_eta_len(const struct OdefitReport *report);

/**
 * Point `i` of the fitted `eta` curve.
 *
 * # Safety
 * `report` must be a live handle; `t` and `eta` must be writable.
 */
enum OdefitStatus odefit_report_eta_point(const struct OdefitReport *report,
                                          size_t i,
                                          double *t,
                                          double *eta);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void odefit_report_free(struct OdefitReport *report);

/**
 * `n ln(rss / n) + 2nk / (n - k - 1)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum OdefitStatus odefit_aicc(double rss, size_t n, size_t k, double *out);

/**
 * Average relative error in percent for each of `dim` coordinates over
 * `m` estimates stored row-major in `estimates` (`m * dim` values).
 *
 * # Safety
 * `estimates` must hold `m * dim` values, `truth` and `out` `dim` values each.
 */
enum OdefitStatus odefit_are(const double *estimates,
                             size_t m,
                             size_t dim,
                             const double *truth,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODEFIT_H */
