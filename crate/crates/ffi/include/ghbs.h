#ifndef GHBS_H
#define GHBS_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of plasticity parameters.
 */
#define GHBS_PARAM_COUNT 8

typedef enum GhbsStatus {
  GHBS_STATUS_OK = 0,
  GHBS_STATUS_NULL_POINTER = 1,
  GHBS_STATUS_INVALID_ARGUMENT = 2,
  GHBS_STATUS_SIMULATION_FAILED = 3,
  GHBS_STATUS_IO = 4,
  GHBS_STATUS_BUFFER_TOO_SMALL = 5,
  GHBS_STATUS_PANIC = 6,
} GhbsStatus;

/**
 * A configured triaxial test.
 */
typedef struct GhbsModel GhbsModel;

/**
 * A fitted quadratic surrogate in the active variables.
 */
typedef struct GhbsSurrogate GhbsSurrogate;

/**
 * Elastic constants of the sand/hydrate mixture.
 */
typedef struct GhbsElastic {
  double youngs_sand;
  double youngs_hydrate;
  double saturation_exponent;
  double poisson;
  double hydrate_saturation;
} GhbsElastic;

/**
 * Drained triaxial loading schedule.
 */
typedef struct GhbsSchedule {
  double sigma_c;
  double eps_a_rate;
  size_t n_steps;
  double dt;
} GhbsSchedule;

/**
 * State after one load step.
 */
typedef struct GhbsTrajectoryPoint {
  size_t step;
  double axial_strain;
  double vol_strain;
  double p;
  double q;
  double lambda_acc;
  double alpha;
  double beta;
} GhbsTrajectoryPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ghbs_last_error(void);

/**
 * Creates a model with default elastic constants and loading schedule.
 */
struct GhbsModel *ghbs_model_new(void);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`ghbs_model_new`] and not be used afterwards.
 */
void ghbs_model_free(struct GhbsModel *model);

/**
 * Replaces the elastic constants after validating them.
 *
 * # Safety
 * `model` and `elastic` must be valid pointers or null.
 */
enum GhbsStatus ghbs_model_set_elastic(struct GhbsModel *model, const struct GhbsElastic *elastic);

/**
 * Replaces the loading schedule after validating it.
 *
 * # Safety
 * `model` and `schedule` must be valid pointers or null.
 */
enum GhbsStatus ghbs_model_set_schedule(struct GhbsModel *model,
                                        const struct GhbsSchedule *schedule);

/**
 * Volumetric strain and shear stress at `n_stations` axial strains.
 * `params` holds the eight physical plasticity parameters.
 *
 * # Safety
 * `params` must point to 8 values; `stations`, `vol_strain` and
 * `shear_stress` to `n_stations` values each.
 */
enum GhbsStatus ghbs_model_qoi(const struct GhbsModel *model,
                               const double *params,
                               const double *stations,
                               size_t n_stations,
                               double *vol_strain,
                               double *shear_stress);

/**
 * Full trajectory including the initial state. `*len` receives the number
 * of points; when it exceeds `capacity` nothing is written and
 * `BufferTooSmall` is returned, so a null `out` with zero capacity queries
 * the size.
 *
 * # Safety
 * `params` must point to 8 values, `out` to `capacity` points and `len` to
 * writable storage.
 */
enum GhbsStatus ghbs_model_simulate(const struct GhbsModel *model,
                                    const double *params,
                                    struct GhbsTrajectoryPoint *out,
                                    size_t capacity,
                                    size_t *len);

/**
 * Half the sum of squared noise-weighted residuals. `data` and `sigma` hold
 * the volumetric strains followed by the shear stresses, `2 n_stations`
 * values each.
 *
 * # Safety
 * `params` must point to 8 values, `stations` to `n_stations`, `data` and
 * `sigma` to `2 n_stations`, and `out` to one writable value.
 */
enum GhbsStatus ghbs_model_misfit(const struct GhbsModel *model,
                                  const double *params,
                                  const double *stations,
                                  size_t n_stations,
                                  const double *data,
                                  const double *sigma,
                                  double *out);

/**
 * Loads a surrogate written by the pipeline's surrogate stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string or null.
 */
struct GhbsSurrogate *ghbs_surrogate_load(const char *path);

/**
 * Active dimension of a surrogate, or 0 for null.
 *
 * # Safety
 * `surrogate` must be valid or null.
 */
size_t ghbs_surrogate_dim(const struct GhbsSurrogate *surrogate);

/**
 * Evaluates the surrogate at `y` of length `k`.
 *
 * # Safety
 * `y` must point to `k` values and `out` to one writable value.
 */
enum GhbsStatus ghbs_surrogate_eval(const struct GhbsSurrogate *surrogate,
                                    const double *y,
                                    size_t k,
                                    double *out);

/**
 * Releases a surrogate; null is ignored.
 *
 * # Safety
 * `surrogate` must come from [`ghbs_surrogate_load`] and not be used
 * afterwards.
 */
void ghbs_surrogate_free(struct GhbsSurrogate *surrogate);

/**
 * Gradient sample count `ceil(alpha * ell * ln n)`.
 *
 * # Safety
 * `out` must point to one writable value.
 */
enum GhbsStatus ghbs_heuristic_sample_count(double alpha, size_t ell, double n, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GHBS_H */
