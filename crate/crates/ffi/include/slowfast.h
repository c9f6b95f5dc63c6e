#ifndef SLOWFAST_H
#define SLOWFAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_CONFIG = 3,
  SF_STATUS_NUMERICAL = 4,
  SF_STATUS_IO = 5,
  SF_STATUS_BUFFER_TOO_SMALL = 6,
  SF_STATUS_PANIC = 7,
} SfStatus;

/**
 * Opaque handle to a solved problem: equilibrium, linearized operators and coefficients.
 */
typedef struct SfProblem SfProblem;

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated, always NUL-terminated
 * when `len > 0`) and returns its full length in bytes without the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sf_last_error(char *buf, size_t len);

/**
 * Builds a preset model (`free_abp`, `von_mises` or `active_2d`) with `n` spatial dimensions
 * on `m` angular nodes. `coupling` is the pair-interaction strength.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer. On success `*out` owns a
 * handle to be released with [`sf_problem_free`].
 */
enum SfStatus sf_problem_preset(const char *name,
                                size_t n,
                                double coupling,
                                size_t m,
                                struct SfProblem **out);

/**
 * Builds the problem described by a TOML configuration (same schema as the command line tool).
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer. On success `*out` owns a
 * handle to be released with [`sf_problem_free`].
 */
enum SfStatus sf_problem_from_toml(const char *toml, struct SfProblem **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `p` must be null or a handle from this library that has not been freed.
 */
void sf_problem_free(struct SfProblem *p);

/**
 * Spatial dimension n; the matrices below are n×n, row-major.
 *
 * # Safety
 * `p` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_problem_dim(const struct SfProblem *p, size_t *out);

/**
 * Number of angular nodes, the length of the equilibrium density.
 *
 * # Safety
 * `p` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_problem_nodes(const struct SfProblem *p, size_t *out);

/**
 * Equilibrium density G at the angular nodes θ_j = -π + 2πj/m.
 *
 * # Safety
 * `p` must be a live handle and `out` must point to `len` writable doubles.
 */
enum SfStatus sf_problem_equilibrium(const struct SfProblem *p, double *out, size_t len);

/**
 * Diffusivity matrix D.
 *
 * # Safety
 * `p` must be a live handle and `out` must point to `len` writable doubles.
 */
enum SfStatus sf_problem_diffusivity(const struct SfProblem *p, double *out, size_t len);

/**
 * Mobility matrix σ.
 *
 * # Safety
 * `p` must be a live handle and `out` must point to `len` writable doubles.
 */
enum SfStatus sf_problem_mobility(const struct SfProblem *p, double *out, size_t len);

/**
 * Dissipativity margin κ of the linearized operator.
 *
 * # Safety
 * `p` must be a live handle and `out` a valid pointer.
 */
enum SfStatus sf_problem_kappa(const struct SfProblem *p, double *out);

#endif  /* SLOWFAST_H */
