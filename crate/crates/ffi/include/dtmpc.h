#ifndef DTMPC_H
#define DTMPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DtmpcStatus {
  DTMPC_STATUS_OK = 0,
  DTMPC_STATUS_NULL_POINTER = 1,
  DTMPC_STATUS_INVALID_ARGUMENT = 2,
  DTMPC_STATUS_CONFIG = 3,
  /**
   * Solver, model or numerical failure.
   */
  DTMPC_STATUS_NUMERICAL = 4,
  /**
   * The output buffer is shorter than required.
   */
  DTMPC_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Call `dtmpc_problem_solve` first.
   */
  DTMPC_STATUS_NOT_SOLVED = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  DTMPC_STATUS_PANIC = 7,
} DtmpcStatus;

typedef enum DtmpcSystem {
  DTMPC_SYSTEM_DUBINS = 0,
  DTMPC_SYSTEM_QUADROTOR = 1,
  DTMPC_SYSTEM_ROBOT_ARM = 2,
} DtmpcSystem;

typedef enum DtmpcRoute {
  DTMPC_ROUTE_DOC_FULL = 0,
  DTMPC_ROUTE_DOC_GAUSS_NEWTON = 1,
  DTMPC_ROUTE_PDP = 2,
  DTMPC_ROUTE_FINITE_DIFFERENCE = 3,
} DtmpcRoute;

typedef enum DtmpcAlgorithm {
  DTMPC_ALGORITHM_NT_MPC = 0,
  DTMPC_ALGORITHM_DT_MPC = 1,
} DtmpcAlgorithm;

typedef enum DtmpcOutcome {
  DTMPC_OUTCOME_SUCCESS = 0,
  DTMPC_OUTCOME_VIOLATION = 1,
  DTMPC_OUTCOME_DIVERGED = 2,
  DTMPC_OUTCOME_TIMEOUT = 3,
} DtmpcOutcome;

/**
 * Experiment configuration.
 */
typedef struct DtmpcConfig DtmpcConfig;

/**
 * Nominal trajectory-optimization problem of a configuration, plus its
 * most recent solution.
 */
typedef struct DtmpcProblem DtmpcProblem;

typedef struct DtmpcDims {
  size_t n_x;
  size_t n_u;
  size_t horizon;
  size_t n_theta;
} DtmpcDims;

typedef struct DtmpcSolveInfo {
  size_t iterations;
  bool converged;
  double cost;
  double kkt_residual;
} DtmpcSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next call into the library from the same thread.
 */
const char *dtmpc_last_error(void);

/**
 * Library version, static storage.
 */
const char *dtmpc_version(void);

/**
 * Built-in defaults for `system`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DtmpcStatus dtmpc_config_default(enum DtmpcSystem system, struct DtmpcConfig **out);

/**
 * Parse a TOML document layered over its system's defaults.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` writable.
 */
enum DtmpcStatus dtmpc_config_from_toml(const char *toml, struct DtmpcConfig **out);

/**
 * # Safety
 * `cfg` must come from a `dtmpc_config_*` constructor, or be null.
 */
void dtmpc_config_free(struct DtmpcConfig *cfg);

/**
 * Nominal problem of `cfg` from its first trial start, over the MPC
 * horizon, with the safety-embedded model.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum DtmpcStatus dtmpc_problem_new(const struct DtmpcConfig *cfg, struct DtmpcProblem **out);

/**
 * # Safety
 * `p` must come from `dtmpc_problem_new`, or be null.
 */
void dtmpc_problem_free(struct DtmpcProblem *p);

/**
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum DtmpcStatus dtmpc_problem_dims(const struct DtmpcProblem *p, struct DtmpcDims *out);

/**
 * Copy `theta` into `out` (`len >= n_theta`).
 *
 * # Safety
 * `p` must be a live handle and `out` valid for `len` writes.
 */
enum DtmpcStatus dtmpc_problem_get_theta(const struct DtmpcProblem *p, double *out, size_t len);

/**
 * Replace `theta`; `len` must equal `n_theta`. Discards the solution.
 *
 * # Safety
 * `p` must be a live handle and `theta` valid for `len` reads.
 */
enum DtmpcStatus dtmpc_problem_set_theta(struct DtmpcProblem *p, const double *theta, size_t len);

/**
 * Solve with at most `budget` DDP iterations (0 keeps the configured
 * budget), warm-started from the previous solution when there is one.
 *
 * # Safety
 * `p` must be a live handle; `info` may be null.
 */
enum DtmpcStatus dtmpc_problem_solve(struct DtmpcProblem *p,
                                     size_t budget,
                                     struct DtmpcSolveInfo *info);

/**
 * Copy the solved trajectory: `xs` gets `(horizon + 1) * n_x` values,
 * `us` gets `horizon * n_u`, both row-major by time step.
 *
 * # Safety
 * `p` must be a live handle; `xs` and `us` valid for their lengths.
 */
enum DtmpcStatus dtmpc_problem_trajectory(const struct DtmpcProblem *p,
                                          double *xs,
                                          size_t xs_len,
                                          double *us,
                                          size_t us_len);

/**
 * Gradient of the unit-weight quadratic loss `sum |x_k|^2 + sum |u_k|^2`
 * with respect to `theta`, through the last solution, by `route`.
 *
 * # Safety
 * `p` must be a live handle and `out` valid for `len` writes.
 */
enum DtmpcStatus dtmpc_problem_hypergradient(const struct DtmpcProblem *p,
                                             enum DtmpcRoute route,
                                             double *out,
                                             size_t len);

/**
 * Run one closed-loop trial of `cfg` with trial seed `seed`.
 *
 * # Safety
 * `cfg` must be a live handle; `outcome` writable; `steps` may be null.
 */
enum DtmpcStatus dtmpc_run_trial(const struct DtmpcConfig *cfg,
                                 enum DtmpcAlgorithm algorithm,
                                 uint64_t seed,
                                 enum DtmpcOutcome *outcome,
                                 size_t *steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DTMPC_H */
