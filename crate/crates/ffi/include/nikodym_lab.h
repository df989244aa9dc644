#ifndef NIKODYM_LAB_H
#define NIKODYM_LAB_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum NlStatus {
  NL_STATUS_OK = 0,
  NL_STATUS_NULL_POINTER = 1,
  NL_STATUS_DOMAIN = 2,
  NL_STATUS_SINGULAR = 3,
  NL_STATUS_LEFT_BOX = 4,
  NL_STATUS_INSTABILITY = 5,
  NL_STATUS_CONVERGENCE = 6,
  NL_STATUS_AMBIGUITY = 7,
  NL_STATUS_DEGENERATE_TUBE = 8,
  NL_STATUS_RESOLUTION = 9,
  NL_STATUS_COUNTEREXAMPLE_VIOLATION = 10,
  NL_STATUS_CONFIG = 11,
  NL_STATUS_IO = 12,
  NL_STATUS_INTERNAL = 13,
  NL_STATUS_PANIC = 14,
} NlStatus;

typedef enum NlFamily {
  NL_FAMILY_EUCLIDEAN = 0,
  NL_FAMILY_THREE_D = 1,
  NL_FAMILY_ODD_FOCUS = 2,
  NL_FAMILY_EVEN_FOCUS = 3,
} NlFamily;

typedef enum NlProfile {
  NL_PROFILE_EXP_FLAT = 0,
  NL_PROFILE_MONOMIAL = 1,
} NlProfile;

// Opaque metric patch.
typedef struct NlPatch NlPatch;

// Opaque result bundle of a harness run.
typedef struct NlRun NlRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next call into the library from this thread.
const char *nl_last_error_message(void);

// Creates a patch; `k` is ignored for the exp-flat profile.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NlStatus nl_patch_new(enum NlFamily family,
                           size_t n,
                           enum NlProfile profile,
                           uint32_t k,
                           struct NlPatch **out);

// # Safety
// `patch` must come from [`nl_patch_new`] and not be used afterwards.
void nl_patch_free(struct NlPatch *patch);

// # Safety
// `patch` must be a live handle or null.
size_t nl_patch_dim(const struct NlPatch *patch);

// Writes the `n × n` cometric at `x` into `out`.
//
// # Safety
// `x` must hold `n` values and `out` must have room for `n * n`.
enum NlStatus nl_cometric(const struct NlPatch *patch, const double *x, size_t n, double *out);

// # Safety
// `x` and `xi` must hold `n` values; `out` must be writable.
enum NlStatus nl_hamiltonian(const struct NlPatch *patch,
                             const double *x,
                             const double *xi,
                             size_t n,
                             double *out);

// # Safety
// `x` must hold `n` values; `out` must be writable.
enum NlStatus nl_volume_density(const struct NlPatch *patch,
                                const double *x,
                                size_t n,
                                double *out);

// Closed-form fan point at arclength `t`.
//
// # Safety
// `base` holds `nb` values, `theta` holds `nt` values, `out` has room for the patch dimension `n`.
enum NlStatus nl_closed_form_fan(const struct NlPatch *patch,
                                 const double *base,
                                 size_t nb,
                                 const double *theta,
                                 size_t nt,
                                 double t,
                                 double *out,
                                 size_t n);

// # Safety
// As [`nl_closed_form_fan`], with a single output value.
enum NlStatus nl_fan_jacobian(const struct NlPatch *patch,
                              const double *base,
                              size_t nb,
                              const double *theta,
                              size_t nt,
                              double t,
                              double *out);

// Integrates the geodesic from `(x, xi)` for arclength `t` (either sign)
// and writes the final phase point.
//
// # Safety
// `x`, `xi`, `x_out` and `xi_out` must each hold `n` values.
enum NlStatus nl_flow_endpoint(const struct NlPatch *patch,
                               const double *x,
                               const double *xi,
                               size_t n,
                               double t,
                               double step,
                               double *x_out,
                               double *xi_out);

// Riemannian distance by shooting.
//
// # Safety
// `x` and `y` must hold `n` values; `out` must be writable.
enum NlStatus nl_dist(const struct NlPatch *patch,
                      const double *x,
                      const double *y,
                      size_t n,
                      double *out);

// `R^upper_{lower[0] lower[1] lower[2]}` with 0-based indices.
//
// # Safety
// `lower` must hold 3 values, `x` must hold `n`, `out` must be writable.
enum NlStatus nl_curvature_component(const struct NlPatch *patch,
                                     size_t upper,
                                     const size_t *lower,
                                     const double *x,
                                     size_t n,
                                     double h,
                                     double *out);

// Critical exponent as the reduced fraction `num / den`.
//
// # Safety
// `num` and `den` must be writable.
enum NlStatus nl_exponent_threshold(size_t n, int64_t *num, int64_t *den);

// Runs the experiment described by a TOML configuration string. Nothing
// is written to disk; fetch the outputs with [`nl_run_summary_json`] and
// [`nl_run_csv`].
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out` must be writable.
enum NlStatus nl_run_toml(const char *config_toml, struct NlRun **out);

// 1 if every verdict of the run passed, 0 otherwise (or for null).
//
// # Safety
// `handle` must be a live run handle or null.
int32_t nl_run_passed(const struct NlRun *handle);

// Summary JSON, owned by the handle.
//
// # Safety
// `handle` must be a live run handle or null.
const char *nl_run_summary_json(const struct NlRun *handle);

// Datapoint CSV, owned by the handle.
//
// # Safety
// `handle` must be a live run handle or null.
const char *nl_run_csv(const struct NlRun *handle);

// # Safety
// `handle` must come from [`nl_run_toml`] and not be used afterwards.
void nl_run_free(struct NlRun *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NIKODYM_LAB_H */
