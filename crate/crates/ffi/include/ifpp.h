#ifndef IFPP_H
#define IFPP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum IfppInterpolation {
  IFPP_INTERPOLATION_LINEAR = 0,
  IFPP_INTERPOLATION_CONSTANT_LEFT = 1,
} IfppInterpolation;

typedef enum IfppStatus {
  IFPP_STATUS_OK = 0,
  IFPP_STATUS_NULL_POINTER = 1,
  IFPP_STATUS_DOMAIN = 2,
  IFPP_STATUS_COEFFICIENT = 3,
  IFPP_STATUS_INPUT = 4,
  IFPP_STATUS_FORMAT = 5,
  IFPP_STATUS_CONFIG = 6,
  IFPP_STATUS_SCHEME = 7,
  IFPP_STATUS_NON_CONVERGENCE = 8,
  IFPP_STATUS_IO = 9,
  IFPP_STATUS_PANIC = 10,
} IfppStatus;

typedef struct IfppBoundary IfppBoundary;

typedef struct IfppCurve IfppCurve;

/**
 * A diffusion together with its initial law.
 */
typedef struct IfppModel IfppModel;

/**
 * Lattice resolution shared by the PDE entry points.
 */
typedef struct IfppGrid {
  double dx;
  double dt;
  /**
   * Start time used in place of a point-mass initial law.
   */
  double warmup;
} IfppGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ifpp_last_error(void);

/**
 * Brownian motion with constant drift `mu` and volatility `sigma > 0`,
 * started at `x0`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum IfppStatus ifpp_model_brownian(double mu, double sigma, double x0, struct IfppModel **out);

/**
 * Model from a JSON run configuration (the same format as the CLI).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` as for
 * [`ifpp_model_brownian`].
 */
enum IfppStatus ifpp_model_from_json(const char *json, struct IfppModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void ifpp_model_free(struct IfppModel *model);

/**
 * Barrier through `n` knots on `[0, horizon]`. Use `-INFINITY` for
 * minus-infinity values.
 *
 * # Safety
 * `t` and `b` must point to `n` doubles each; `out` must be writable.
 */
enum IfppStatus ifpp_boundary_from_knots(const double *t,
                                         const double *b,
                                         size_t n,
                                         enum IfppInterpolation interpolation,
                                         double horizon,
                                         struct IfppBoundary **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum IfppStatus ifpp_boundary_constant(double value, double horizon, struct IfppBoundary **out);

/**
 * # Safety
 * `boundary` must be a live handle and `value` writable.
 */
enum IfppStatus ifpp_boundary_eval(const struct IfppBoundary *boundary, double t, double *value);

/**
 * # Safety
 * `boundary` must be NULL or a handle not yet freed.
 */
void ifpp_boundary_free(struct IfppBoundary *boundary);

/**
 * Survival curve from `n` samples; times start at 0 and increase.
 *
 * # Safety
 * `t` and `p` must point to `n` doubles each; `out` must be writable.
 */
enum IfppStatus ifpp_curve_from_samples(const double *t,
                                        const double *p,
                                        size_t n,
                                        struct IfppCurve **out);

/**
 * Number of samples in the curve, or 0 for NULL.
 *
 * # Safety
 * `curve` must be NULL or a live handle.
 */
size_t ifpp_curve_len(const struct IfppCurve *curve);

/**
 * Copies up to `capacity` sample times and values into the buffers.
 *
 * # Safety
 * `curve` must be a live handle; `t` and `p` must have room for
 * `capacity` doubles.
 */
enum IfppStatus ifpp_curve_samples(const struct IfppCurve *curve,
                                   double *t,
                                   double *p,
                                   size_t capacity);

/**
 * # Safety
 * `curve` must be a live handle and `value` writable.
 */
enum IfppStatus ifpp_curve_eval(const struct IfppCurve *curve, double t, double *value);

/**
 * # Safety
 * `curve` must be NULL or a handle not yet freed.
 */
void ifpp_curve_free(struct IfppCurve *curve);

/**
 * Survival curve at landmark level `level`, sampled at the lattice times.
 *
 * # Safety
 * `model` and `boundary` must be live handles; `out` must be writable.
 */
enum IfppStatus ifpp_direct_solve(const struct IfppModel *model,
                                  const struct IfppBoundary *boundary,
                                  uint32_t level,
                                  struct IfppGrid grid,
                                  struct IfppCurve **out);

/**
 * Levels `min_level..=max_level` on a shared lattice, extrapolated to the
 * continuous-monitoring limit.
 *
 * # Safety
 * As for [`ifpp_direct_solve`].
 */
enum IfppStatus ifpp_direct_refine(const struct IfppModel *model,
                                   const struct IfppBoundary *boundary,
                                   uint32_t min_level,
                                   uint32_t max_level,
                                   struct IfppGrid grid,
                                   struct IfppCurve **out);

/**
 * Barrier recovered from a survival curve on `[0, horizon of the curve]`.
 *
 * # Safety
 * `model` and `curve` must be live handles; `out` must be writable.
 */
enum IfppStatus ifpp_inverse_solve(const struct IfppModel *model,
                                   const struct IfppCurve *curve,
                                   struct IfppGrid grid,
                                   struct IfppBoundary **out);

/**
 * Monte Carlo survival estimate (non-strict crossing rule) on the grid of
 * step `dt` up to the barrier horizon. `ci_half_width` may be NULL; when
 * given it receives the largest 99% half-width over the grid.
 *
 * # Safety
 * `model` and `boundary` must be live handles; `out` must be writable.
 */
enum IfppStatus ifpp_mc_survival(const struct IfppModel *model,
                                 const struct IfppBoundary *boundary,
                                 size_t n_paths,
                                 double dt,
                                 uint64_t seed,
                                 bool bridge,
                                 struct IfppCurve **out,
                                 double *ci_half_width);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFPP_H */
