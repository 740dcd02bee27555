#ifndef CWLAB_H
#define CWLAB_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum CwStatus {
  CwStatusOk = 0,
  CwStatusNullArgument = 1,
  CwStatusUtf8 = 2,
  CwStatusParse = 3,
  CwStatusValidation = 4,
  CwStatusHypothesis = 5,
  CwStatusSolver = 6,
  CwStatusOutOfRange = 7,
  CwStatusPanic = 8,
} CwStatus;

/**
 * Opaque simulation trace handle.
 */
typedef struct CwEnergyTrace CwEnergyTrace;

/**
 * Opaque scenario handle.
 */
typedef struct CwScenario CwScenario;

/**
 * Plain-data decay fit result.
 */
typedef struct CwDecayFit {
  double theta;
  double m_factor;
  double residual_rms;
  /**
   * 1 when the fitted slope indicates decay.
   */
  int32_t decay_observed;
} CwDecayFit;

/**
 * Plain-data ray-check result.
 */
typedef struct CwGccResult {
  /**
   * 1 when every sampled ray meets the damping region in time.
   */
  int32_t holds;
  double max_entry_time;
  double worst_origin[2];
  double worst_direction[2];
  size_t rays_traced;
  size_t rays_missed;
} CwGccResult;

/**
 * Plain-data control synthesis summary.
 */
typedef struct CwHumSummary {
  size_t iterations;
  double final_residual;
  double observability_ratio;
  /**
   * Terminal state norm of the verified closed loop, relative to the
   * initial data norm.
   */
  double terminal_residual;
} CwHumSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message for this thread into `buf` (NUL-terminated,
 * truncated to `cap`); returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (length query).
 */
size_t cw_last_error(char *buf, size_t cap);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum CwStatus cw_scenario_load(const char *path, struct CwScenario **out);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum CwStatus cw_scenario_parse(const char *text, struct CwScenario **out);

/**
 * Frees a scenario handle; null is a no-op.
 *
 * # Safety
 * `scenario` must come from `cw_scenario_load`/`cw_scenario_parse`.
 */
void cw_scenario_free(struct CwScenario *scenario);

/**
 * Writes the scenario's canonical hash (16 hex chars + NUL) into `buf`.
 *
 * # Safety
 * `scenario` must be a live handle; `buf` must hold at least `cap` bytes.
 */
enum CwStatus cw_scenario_hash(const struct CwScenario *scenario, char *buf, size_t cap);

/**
 * Integrates the damped system from the scenario's initial data and returns
 * the sampled energy trace.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be a valid pointer.
 */
enum CwStatus cw_simulate(const struct CwScenario *scenario, struct CwEnergyTrace **out);

/**
 * Number of samples in the trace.
 *
 * # Safety
 * `trace` must be a live handle.
 */
size_t cw_trace_len(const struct CwEnergyTrace *trace);

/**
 * Sample times; valid until the handle is freed.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *cw_trace_times(const struct CwEnergyTrace *trace);

/**
 * Strong energy E per sample; valid until the handle is freed.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *cw_trace_energy(const struct CwEnergyTrace *trace);

/**
 * Partial energy e1 per sample.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *cw_trace_e1(const struct CwEnergyTrace *trace);

/**
 * Weakened partial energy per sample.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *cw_trace_e2_tilde(const struct CwEnergyTrace *trace);

/**
 * Mixed energy per sample.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *cw_trace_energy_mixed(const struct CwEnergyTrace *trace);

/**
 * Dissipation integral accumulated since the previous sample.
 *
 * # Safety
 * `trace` must be a live handle.
 */
const double *cw_trace_dissipation(const struct CwEnergyTrace *trace);

/**
 * Frees a trace handle; null is a no-op.
 *
 * # Safety
 * `trace` must come from `cw_simulate`.
 */
void cw_trace_free(struct CwEnergyTrace *trace);

/**
 * Least-squares exponential fit of the trace over [t0, t1]; `mixed` nonzero
 * fits the mixed energy instead of the strong one.
 *
 * # Safety
 * `trace` and `out` must be valid pointers.
 */
enum CwStatus cw_decay_fit(const struct CwEnergyTrace *trace,
                           double t0,
                           double t1,
                           int32_t mixed,
                           struct CwDecayFit *out);

/**
 * Sampled ray check of the scenario's damping region.
 *
 * # Safety
 * `scenario` and `out` must be valid pointers.
 */
enum CwStatus cw_gcc_check(const struct CwScenario *scenario, struct CwGccResult *out);

/**
 * Synthesizes the exact control for the scenario's initial data at tolerance
 * `tol` and verifies the closed loop.
 *
 * # Safety
 * `scenario` and `out` must be valid pointers.
 */
enum CwStatus cw_hum_solve(const struct CwScenario *scenario, double tol, struct CwHumSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CWLAB_H */
