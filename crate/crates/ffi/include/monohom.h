#ifndef MONOHOM_H
#define MONOHOM_H

#include <stddef.h>
#include <stdint.h>

typedef enum MonohomStatus {
  MONOHOM_STATUS_OK = 0,
  MONOHOM_STATUS_NULL_POINTER = 1,
  MONOHOM_STATUS_INVALID_ARGUMENT = 2,
  MONOHOM_STATUS_NOT_CONVERGED = 3,
  MONOHOM_STATUS_INVARIANT = 4,
  MONOHOM_STATUS_CONFIG = 5,
  MONOHOM_STATUS_IO = 6,
  MONOHOM_STATUS_BUFFER_TOO_SMALL = 7,
  MONOHOM_STATUS_PANIC = 8,
} MonohomStatus;

typedef struct MonohomCorrector MonohomCorrector;

typedef struct MonohomGrid MonohomGrid;

typedef struct MonohomOperator MonohomOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *monohom_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *monohom_version(void);

/**
 * Torus `[0, length)^d` with `n` points per axis.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MonohomStatus monohom_grid_new(uintptr_t d,
                                    double length,
                                    uintptr_t n,
                                    struct MonohomGrid **out);

/**
 * # Safety
 * `grid` must come from [`monohom_grid_new`] or be null.
 */
void monohom_grid_free(struct MonohomGrid *grid);

/**
 * Number of lattice points, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be a live handle or null.
 */
uintptr_t monohom_grid_len(const struct MonohomGrid *grid);

/**
 * Operator with the constant matrix `m` (`d * d` entries, row-major).
 *
 * # Safety
 * `grid` must be live, `m` must hold `d * d` values, `out` valid for writes.
 */
enum MonohomStatus monohom_operator_constant(const struct MonohomGrid *grid,
                                             double p,
                                             double lambda,
                                             const double *m,
                                             struct MonohomOperator **out);

/**
 * Sample `index` of the isotropic Gaussian recipe with correlation length
 * `ell_c`, seeded by `root`.
 *
 * # Safety
 * `grid` must be live and `out` valid for writes.
 */
enum MonohomStatus monohom_operator_random(const struct MonohomGrid *grid,
                                           double p,
                                           double lambda,
                                           double ell_c,
                                           uint64_t root,
                                           uint64_t index,
                                           struct MonohomOperator **out);

/**
 * # Safety
 * `op` must come from a `monohom_operator_*` constructor or be null.
 */
void monohom_operator_free(struct MonohomOperator *op);

/**
 * Corrector and flux corrector for slope `xi` (`d` values).
 *
 * # Safety
 * `op` must be live, `xi` must hold `d` values, `out` valid for writes.
 */
enum MonohomStatus monohom_corrector_solve(const struct MonohomOperator *op,
                                           const double *xi,
                                           double tol,
                                           struct MonohomCorrector **out);

/**
 * # Safety
 * `c` must come from [`monohom_corrector_solve`] or be null.
 */
void monohom_corrector_free(struct MonohomCorrector *c);

/**
 * Spatial average of the flux, `d` values written to `out`.
 *
 * # Safety
 * `c` must be live and `out` must hold `len` values.
 */
enum MonohomStatus monohom_corrector_abar(const struct MonohomCorrector *c,
                                          double *out,
                                          uintptr_t len);

/**
 * Component `axis` of `grad phi` in lattice order.
 *
 * # Safety
 * `c` must be live and `out` must hold `len` values.
 */
enum MonohomStatus monohom_corrector_gradient(const struct MonohomCorrector *c,
                                              uintptr_t axis,
                                              double *out,
                                              uintptr_t len);

/**
 * Newton iterations, final relative residual and flux identity residual.
 *
 * # Safety
 * `c` must be live; each output pointer may be null.
 */
enum MonohomStatus monohom_corrector_stats(const struct MonohomCorrector *c,
                                           uintptr_t *iterations,
                                           double *residual,
                                           double *flux_identity);

/**
 * Runs a JSON experiment config into `out_dir` with `threads` workers
 * (0 picks the default). `exit_code` receives the CLI exit code.
 *
 * # Safety
 * `config_json` and `out_dir` must be NUL-terminated; `exit_code` may be null.
 */
enum MonohomStatus monohom_run_config(const char *config_json,
                                      const char *out_dir,
                                      uintptr_t threads,
                                      int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MONOHOM_H */
