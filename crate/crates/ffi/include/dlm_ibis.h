#ifndef DLM_IBIS_H
#define DLM_IBIS_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum DlmStatus {
  DLM_STATUS_OK = 0,
  DLM_STATUS_NULL_POINTER = 1,
  DLM_STATUS_INVALID_ARGUMENT = 2,
  DLM_STATUS_CONFIG = 3,
  DLM_STATUS_INPUT = 4,
  DLM_STATUS_DOMAIN = 5,
  DLM_STATUS_NUMERICAL = 6,
  DLM_STATUS_DEGENERATE_WEIGHTS = 7,
  DLM_STATUS_STATE = 8,
  DLM_STATUS_IO = 9,
  DLM_STATUS_PANIC = 10,
} DlmStatus;

/**
 * Sampler settings. Defaults: 10000 particles, δ = 0.5, infinite window,
 * one batch, no scheduled rejuvenation, one move per trigger, seed 0,
 * default inverse-Gamma prior without the W < V constraint.
 */
typedef struct DlmConfig DlmConfig;

/**
 * A model structure: family plus site coordinates.
 */
typedef struct DlmModel DlmModel;

/**
 * A fitted posterior: weighted particles plus the evidence trace.
 */
typedef struct DlmPosterior DlmPosterior;

/**
 * An observation series.
 */
typedef struct DlmSeries DlmSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the most recent failure on this thread, or NULL. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *dlm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlm_version(void);

/**
 * Creates a model. `family` is `sinusoid`, `fourier:q` or `humidity`;
 * `east_km` and `north_km` hold one coordinate per site.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out` must be writable.
 */
enum DlmStatus dlm_model_new(const char *family,
                             const double *east_km,
                             const double *north_km,
                             size_t n_sites,
                             struct DlmModel **out);

/**
 * Number of static parameters, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t dlm_model_n_params(const struct DlmModel *model);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void dlm_model_free(struct DlmModel *model);

/**
 * Creates an empty series over `n_sites` sites.
 *
 * # Safety
 * `out` must be writable.
 */
enum DlmStatus dlm_series_new(size_t n_sites, struct DlmSeries **out);

/**
 * Reads a series in the canonical delimited format.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DlmStatus dlm_series_load(const char *path, struct DlmSeries **out);

/**
 * Appends one record. NaN marks a missing value; `humidity` may be NULL.
 * Times must increase strictly.
 *
 * # Safety
 * `temperature` (and `humidity` if not NULL) must hold `n_sites` values.
 */
enum DlmStatus dlm_series_push(struct DlmSeries *series,
                               double time,
                               const double *temperature,
                               const double *humidity,
                               size_t n_sites);

/**
 * Number of records, or 0 for a NULL handle.
 *
 * # Safety
 * `series` must be NULL or a live handle.
 */
size_t dlm_series_len(const struct DlmSeries *series);

/**
 * # Safety
 * `series` must be NULL or a handle not yet freed.
 */
void dlm_series_free(struct DlmSeries *series);

/**
 * # Safety
 * `out` must be writable.
 */
enum DlmStatus dlm_config_new(struct DlmConfig **out);

/**
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void dlm_config_free(struct DlmConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_seed(struct DlmConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_particles(struct DlmConfig *config, size_t n);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_delta(struct DlmConfig *config, double delta);

/**
 * Window width in hours; pass `INFINITY` for full IBIS.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_window(struct DlmConfig *config, double hours);

/**
 * Batch count and the forced rejuvenation period (0 disables).
 *
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_batches(struct DlmConfig *config,
                                      size_t batches,
                                      size_t rejuvenation_period);

/**
 * Worker threads for batched runs; 0 picks the default.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_workers(struct DlmConfig *config, size_t workers);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_moves_per_trigger(struct DlmConfig *config, size_t moves);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum DlmStatus dlm_config_set_constraint(struct DlmConfig *config, bool enabled);

/**
 * Runs IBIS for `model` on `series` with `config`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum DlmStatus dlm_fit(const struct DlmModel *model,
                       const struct DlmSeries *series,
                       const struct DlmConfig *config,
                       struct DlmPosterior **out);

/**
 * # Safety
 * `posterior` must be NULL or a live handle.
 */
size_t dlm_posterior_len(const struct DlmPosterior *posterior);

/**
 * Total log evidence; NaN for a NULL handle.
 *
 * # Safety
 * `posterior` must be NULL or a live handle.
 */
double dlm_posterior_log_evidence(const struct DlmPosterior *posterior);

/**
 * Copies normalised weights into `out` (length ≥ number of particles).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum DlmStatus dlm_posterior_weights(const struct DlmPosterior *posterior, double *out, size_t len);

/**
 * Copies particle parameters row-major (one row per particle, columns in
 * the model's flattened parameter order).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum DlmStatus dlm_posterior_params(const struct DlmPosterior *posterior, double *out, size_t len);

/**
 * Weighted quantile of parameter `index` at probability `prob`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DlmStatus dlm_posterior_quantile(const struct DlmPosterior *posterior,
                                      size_t index,
                                      double prob,
                                      double *out);

/**
 * Copies the cumulative log evidence after each record.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum DlmStatus dlm_posterior_evidence_trace(const struct DlmPosterior *posterior,
                                            double *out,
                                            size_t len);

/**
 * # Safety
 * `posterior` must be NULL or a handle not yet freed.
 */
void dlm_posterior_free(struct DlmPosterior *posterior);

/**
 * Exact Kalman log-likelihood of `series` at the flattened `params`, with
 * the default state prior.
 *
 * # Safety
 * `params` must hold `n_params` doubles; `out` must be writable.
 */
enum DlmStatus dlm_log_likelihood(const struct DlmModel *model,
                                  const struct DlmSeries *series,
                                  const double *params,
                                  size_t n_params,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLM_IBIS_H */
