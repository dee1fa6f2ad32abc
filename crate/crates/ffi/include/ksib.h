#ifndef KSIB_H
#define KSIB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KsibStatus {
  KSIB_STATUS_OK = 0,
  KSIB_STATUS_NULL_POINTER = 1,
  KSIB_STATUS_INVALID_ARGUMENT = 2,
  KSIB_STATUS_SINGULAR = 3,
  KSIB_STATUS_INVALID_STATE = 4,
  KSIB_STATUS_IO = 5,
  KSIB_STATUS_PANIC = 6,
} KsibStatus;

/*
 Opaque weighted kernel ridge fit.
 */
typedef struct KsibKrr KsibKrr;

/*
 Opaque ε-greedy single-index policy. Each round is a
 `ksib_policy_decide` followed by one `ksib_policy_observe`.
 */
typedef struct KsibPolicy KsibPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failed call on this thread; empty after a
 success. Valid until the next ksib call on the same thread.
 */
const char *ksib_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *ksib_version(void);

/*
 Standard normal quantile Φ⁻¹(p) for p in (0, 1).

 # Safety
 `out` must be valid for one write.
 */
enum KsibStatus ksib_normal_quantile(double p, double *out);

/*
 Chi-square quantile with `dof` ≥ 1 degrees of freedom.

 # Safety
 `out` must be valid for one write.
 */
enum KsibStatus ksib_chi_square_quantile(double p, uint32_t dof, double *out);

/*
 Fits weighted kernel ridge regression with a Gaussian kernel on `n`
 points. `bandwidth` ≤ 0 selects the median heuristic; `weights` may be
 null for unit weights.

 # Safety
 `us` and `ys` are valid for `n` reads, `weights` is null or valid for
 `n` reads, and `out` is valid for one write.
 */
enum KsibStatus ksib_krr_fit(const double *us,
                             const double *ys,
                             const double *weights,
                             size_t n,
                             double bandwidth,
                             double lambda,
                             struct KsibKrr **out);

/*
 # Safety
 `krr` is a live handle from `ksib_krr_fit`; `out` is valid for one write.
 */
enum KsibStatus ksib_krr_predict(const struct KsibKrr *krr, double u, double *out);

/*
 # Safety
 `krr` is null or a handle from `ksib_krr_fit` not yet freed.
 */
void ksib_krr_free(struct KsibKrr *krr);

/*
 A policy over `arms` arms and `dim`-dimensional contexts with a
 standard Gaussian score and the default schedule.

 # Safety
 `out` is valid for one write.
 */
enum KsibStatus ksib_policy_new(size_t arms,
                                size_t dim,
                                size_t warm_start,
                                uint64_t seed,
                                struct KsibPolicy **out);

/*
 Chooses an arm for context `x` of length `dim`. Writes the pulled arm
 and its propensity; either output may be null.

 # Safety
 `policy` is a live handle, `x` is valid for `dim` reads, outputs are
 null or valid for one write.
 */
enum KsibStatus ksib_policy_decide(struct KsibPolicy *policy,
                                   const double *x,
                                   size_t dim,
                                   size_t *arm_out,
                                   double *propensity_out);

/*
 Feeds back the reward of the arm chosen by the last decision.

 # Safety
 `policy` is a live handle.
 */
enum KsibStatus ksib_policy_observe(struct KsibPolicy *policy, double reward);

/*
 Completed rounds, or 0 for a null handle.

 # Safety
 `policy` is null or a live handle.
 */
size_t ksib_policy_rounds(const struct KsibPolicy *policy);

/*
 Current estimated direction of `arm`, written to `out` of length `dim`.
 Fails before the arm has an estimate.

 # Safety
 `policy` is a live handle and `out` is valid for `dim` writes.
 */
enum KsibStatus ksib_policy_direction(const struct KsibPolicy *policy,
                                      size_t arm,
                                      double *out,
                                      size_t dim);

/*
 # Safety
 `policy` is null or a handle from `ksib_policy_new` not yet freed.
 */
void ksib_policy_free(struct KsibPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSIB_H */
