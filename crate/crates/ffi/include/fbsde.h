#ifndef FBSDE_H
#define FBSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FbsdeStatus {
  FBSDE_STATUS_OK = 0,
  FBSDE_STATUS_INVALID_ARGUMENT = 1,
  FBSDE_STATUS_UNKNOWN_PRESET = 2,
  FBSDE_STATUS_CFL_VIOLATION = 3,
  FBSDE_STATUS_ELLIPTICITY = 4,
  FBSDE_STATUS_OUT_OF_DOMAIN = 5,
  FBSDE_STATUS_RANK_DEFICIENT = 6,
  FBSDE_STATUS_OUTSIDE_BALL = 7,
  FBSDE_STATUS_PARSE = 8,
  FBSDE_STATUS_IO = 9,
  FBSDE_STATUS_NULL_POINTER = 10,
  FBSDE_STATUS_PANIC = 11,
} FbsdeStatus;

// A solved value field together with the smoothing radius it was built with.
typedef struct FbsdeField FbsdeField;

// A feedback policy table.
typedef struct FbsdePolicy FbsdePolicy;

// A problem definition.
typedef struct FbsdeProblem FbsdeProblem;

// Output of [`fbsde_chattering`].
typedef struct FbsdeChattering {
  double u_bar;
  double w_bar[2];
  double theta_bar;
  double residual;
  double alpha;
} FbsdeChattering;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. Empty after a successful call.
// The pointer stays valid until the next call on the same thread.
const char *fbsde_last_error(void);

// Loads a built-in problem by name.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a writable pointer.
enum FbsdeStatus fbsde_problem_preset(const char *name, struct FbsdeProblem **out);

// # Safety
// `problem` must be null or a live handle.
size_t fbsde_problem_dim(const struct FbsdeProblem *problem);

// # Safety
// `problem` must be null or a live handle; `out` must be writable.
enum FbsdeStatus fbsde_problem_horizon(const struct FbsdeProblem *problem, double *out);

// # Safety
// `problem` must be null or a handle not yet freed.
void fbsde_problem_free(struct FbsdeProblem *problem);

// Smooths the problem with radius `delta` and solves the HJB equation on
// `[-half_width, half_width]^d` with `nx` nodes per axis. `nt = 0` picks the
// smallest stable number of time levels.
//
// # Safety
// `problem` must be a live handle and `out` writable.
enum FbsdeStatus fbsde_solve(const struct FbsdeProblem *problem,
                             double delta,
                             size_t nx,
                             double half_width,
                             size_t nt,
                             struct FbsdeField **out);

// # Safety
// `field` must be a live handle, `x` must hold `dim` values and `out` be writable.
enum FbsdeStatus fbsde_field_eval(const struct FbsdeField *field,
                                  double t,
                                  const double *x,
                                  size_t dim,
                                  double *out);

// Writes the `dim` components of the spatial gradient to `out`.
//
// # Safety
// `field` must be a live handle; `x` and `out` must each hold `dim` values.
enum FbsdeStatus fbsde_field_grad(const struct FbsdeField *field,
                                  double t,
                                  const double *x,
                                  size_t dim,
                                  double *out);

// # Safety
// `field` must be a live handle and `path` a NUL-terminated string.
enum FbsdeStatus fbsde_field_save(const struct FbsdeField *field, const char *path);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum FbsdeStatus fbsde_field_load(const char *path, struct FbsdeField **out);

// Smoothing radius the field was solved with.
//
// # Safety
// `field` must be null or a live handle; `out` must be writable.
enum FbsdeStatus fbsde_field_delta(const struct FbsdeField *field, double *out);

// # Safety
// `field` must be null or a handle not yet freed.
void fbsde_field_free(struct FbsdeField *field);

// Extracts the feedback policy of `field` for `problem`, smoothed at the field's radius.
//
// # Safety
// `problem` and `field` must be live handles and `out` writable.
enum FbsdeStatus fbsde_policy_extract(const struct FbsdeProblem *problem,
                                      const struct FbsdeField *field,
                                      struct FbsdePolicy **out);

// # Safety
// `policy` must be a live handle, `x` must hold `dim` values and `out` be writable.
enum FbsdeStatus fbsde_policy_lookup(const struct FbsdePolicy *policy,
                                     double t,
                                     const double *x,
                                     size_t dim,
                                     double *out);

// # Safety
// `policy` must be null or a handle not yet freed.
void fbsde_policy_free(struct FbsdePolicy *policy);

// Monte Carlo cost of the constant control `u` started at `(t, x)`.
//
// # Safety
// `problem` and `field` must be live handles, `x` must hold `dim` values and
// `mean` and `std_error` must be writable.
enum FbsdeStatus fbsde_constant_cost(const struct FbsdeProblem *problem,
                                     const struct FbsdeField *field,
                                     double u,
                                     double t,
                                     const double *x,
                                     size_t dim,
                                     size_t paths,
                                     size_t steps,
                                     uint64_t seed,
                                     double *mean,
                                     double *std_error);

// Reduces the measure with atoms `(u[i], w[i*dim..(i+1)*dim])` and weights `weights[i]`
// at state `(x, y)` to a single control with an extra noise intensity.
//
// # Safety
// `problem` must be a live handle; `x` holds `dim` values, `u` and `weights` hold `n`
// values, `w` holds `n * dim` values and `out` must be writable.
enum FbsdeStatus fbsde_chattering(const struct FbsdeProblem *problem,
                                  const double *x,
                                  size_t dim,
                                  double y,
                                  const double *u,
                                  const double *w,
                                  const double *weights,
                                  size_t n,
                                  struct FbsdeChattering *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBSDE_H */
