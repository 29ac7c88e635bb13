/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef OPTSWITCH_H
#define OPTSWITCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OsStatus {
  OS_STATUS_OK = 0,
  OS_STATUS_CONFIG_ERROR = 1,
  OS_STATUS_NON_CONVERGENCE = 2,
  OS_STATUS_VERIFICATION_MISMATCH = 3,
  OS_STATUS_IO_ERROR = 4,
  OS_STATUS_NULL_POINTER = 5,
  OS_STATUS_PANIC = 6,
} OsStatus;

/**
 * Validated model plus grid, tolerance and simulation settings.
 */
typedef struct OsModel OsModel;

typedef struct OsSolution OsSolution;

typedef struct OsVerifySummary {
  uint8_t case_predicted;
  /**
   * 0 when the detected regions match no case.
   */
  uint8_t case_observed;
  /**
   * `INFINITY` when the upper switching region is empty.
   */
  double x_lower1;
  /**
   * 0 when the lower switching region is empty, `INFINITY` when it is everything.
   */
  double x_upper2;
  double oracle_sup_rel;
  double residual;
  size_t iterations;
  bool passed;
} OsVerifySummary;

typedef struct OsSimulationSummary {
  double mean;
  double standard_error;
  double truncation_bound;
  size_t n_paths;
} OsSimulationSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *os_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *os_version(void);

/**
 * Loads a built-in preset (`"P1"` .. `"P5"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a writable pointer.
 */
enum OsStatus os_model_from_preset(const char *name, struct OsModel **out);

/**
 * Parses a TOML configuration document (the same format as the CLI's `--config`).
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum OsStatus os_model_from_config(const char *toml, struct OsModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. NULL is ignored.
 */
void os_model_free(struct OsModel *model);

/**
 * Replaces the grid used by subsequent solves.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum OsStatus os_model_set_grid(struct OsModel *model, double x_min, double x_max, size_t nodes);

/**
 * Predicted case number 1..=5 from the parameters alone.
 *
 * # Safety
 * `model` must be a live handle and `case_out` writable.
 */
enum OsStatus os_classify(const struct OsModel *model, uint8_t *case_out);

/**
 * Finite-difference solve on the model's grid.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum OsStatus os_solve(const struct OsModel *model, struct OsSolution **out);

/**
 * # Safety
 * `solution` must come from [`os_solve`] and not be used afterwards. NULL is ignored.
 */
void os_solution_free(struct OsSolution *solution);

/**
 * Number of grid nodes; 0 for NULL.
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
size_t os_solution_len(const struct OsSolution *solution);

/**
 * Copies nodes and values into caller buffers of length `len`, which must
 * equal [`os_solution_len`]. Any of `x`, `v1`, `v2` may be NULL to skip it.
 *
 * # Safety
 * Non-NULL buffers must hold `len` doubles.
 */
enum OsStatus os_solution_copy(const struct OsSolution *solution,
                               double *x,
                               double *v1,
                               double *v2,
                               size_t len);

/**
 * Piecewise-linear values at `x > 0` (linear extrapolation outside the grid).
 *
 * # Safety
 * `solution` must be a live handle; `v1` and `v2` writable.
 */
enum OsStatus os_solution_interpolate(const struct OsSolution *solution,
                                      double x,
                                      double *v1,
                                      double *v2);

/**
 * Solve, oracle comparison, region and bound checks. The summary is filled
 * even when the status is `VerificationMismatch`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum OsStatus os_verify(const struct OsModel *model, struct OsVerifySummary *out);

/**
 * Monte Carlo payoff of the optimal policy from the model's `x0` and start regime.
 *
 * # Safety
 * `model` and `solution` must be live handles and `out` writable.
 */
enum OsStatus os_simulate_optimal(const struct OsModel *model,
                                  const struct OsSolution *solution,
                                  size_t n_paths,
                                  uint64_t seed,
                                  struct OsSimulationSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTSWITCH_H */
