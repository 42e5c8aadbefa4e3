#ifndef DEFAULTLAB_H
#define DEFAULTLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum DlStatus {
  DL_STATUS_OK = 0,
  // A required pointer argument was `NULL`.
  DL_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  DL_STATUS_INVALID_UTF8 = 2,
  // The configuration text could not be parsed.
  DL_STATUS_CONFIG = 3,
  // Model, claim or argument validation failed.
  DL_STATUS_VALIDATION = 4,
  // A solver failed (overflow, rank deficiency, non-convergence).
  DL_STATUS_NUMERICAL = 5,
  DL_STATUS_IO = 6,
  // A panic was caught at the boundary.
  DL_STATUS_PANIC = 7,
} DlStatus;

typedef enum DlHorizon {
  DL_HORIZON_FIXED = 0,
  // Horizon stopped at default.
  DL_HORIZON_STOPPED = 1,
} DlHorizon;

typedef enum DlSolverMode {
  // Regression Monte Carlo on the configured number of paths.
  DL_SOLVER_MODE_LSMC = 0,
  // Deterministic-coefficient ODE reduction.
  DL_SOLVER_MODE_ODE = 1,
} DlSolverMode;

// Resolved model, claim and solver settings.
typedef struct DlModel DlModel;

// A solved BSDE.
typedef struct DlSolution DlSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dl_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`) and returns the full message size including the NUL,
// or 0 when the last call succeeded.
//
// # Safety
// `buf` must be NULL or point to `len` writable bytes.
size_t dl_last_error_message(char *buf, size_t len);

// Builds a model from experiment-configuration TOML text.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum DlStatus dl_model_new(const char *toml, struct DlModel **out);

// # Safety
// `model` must be NULL or a handle from [`dl_model_new`] not yet freed.
void dl_model_free(struct DlModel *model);

// Brownian dimension `d` and number of jump atoms `m`.
//
// # Safety
// `model` must be a live handle; `d` and `m` must be writable.
enum DlStatus dl_model_dims(const struct DlModel *model, size_t *d, size_t *m);

// Azéma supermartingale `G_t = exp(-int_0^t lambda)`.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum DlStatus dl_azema(const struct DlModel *model, double t, double *out);

// Generator `f(t, z, w, w_def)`; `nz` must equal `d` and `nw` must equal `m`.
//
// # Safety
// `model` must be a live handle; `z` and `w` must point to `nz` and `nw`
// readable doubles (may be NULL when the length is 0); `out` must be writable.
enum DlStatus dl_generator(const struct DlModel *model,
                           enum DlHorizon horizon,
                           double t,
                           const double *z,
                           size_t nz,
                           const double *w,
                           size_t nw,
                           double w_def,
                           bool pre_default,
                           double *out);

// Solves the BSDE of the configured claim.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum DlStatus dl_solve(const struct DlModel *model,
                       enum DlSolverMode mode,
                       enum DlHorizon horizon,
                       struct DlSolution **out);

// `Y_0` and its standard error (0 for the ODE solver).
//
// # Safety
// `solution` must be a live handle; `y0` must be writable; `se` may be NULL.
enum DlStatus dl_solution_y0(const struct DlSolution *solution, double *y0, double *se);

// # Safety
// `solution` must be NULL or a handle from [`dl_solve`] not yet freed.
void dl_solution_free(struct DlSolution *solution);

// Value function `-exp(-alpha (x - y0))`.
//
// # Safety
// `out` must be writable.
enum DlStatus dl_value_function(double y0, double x, double alpha, double *out);

// Buyer's indifference price of the configured claim and its standard error.
//
// # Safety
// `model` must be a live handle; `price` must be writable; `se` may be NULL.
enum DlStatus dl_indifference_price(const struct DlModel *model,
                                    enum DlSolverMode mode,
                                    double *price,
                                    double *se);

// Certainty equivalent `(1/alpha) ln E[exp(alpha xi)]` of a claim that
// depends on default only.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum DlStatus dl_certainty_equivalent(const struct DlModel *model, double *out);

// Exact dynamic programming on the serial tree of the model: optimal value,
// its `Y_0` equivalent and the optimal root position.
//
// # Safety
// `model` must be a live handle; `value` must be writable; `y0` and
// `theta0` may be NULL.
enum DlStatus dl_tree_dp(const struct DlModel *model, double *value, double *y0, double *theta0);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEFAULTLAB_H */
