/* C interface of the dtac delay-tolerant distributed ADMM simulator. */

#ifndef DTAC_H
#define DTAC_H

/* Generated by cbindgen from crates/dtac-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a fallible call.
typedef enum DtacStatus {
  // Success.
  DTAC_STATUS_OK = 0,
  // A required pointer argument was null.
  DTAC_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  DTAC_STATUS_INVALID_UTF8 = 2,
  // The scenario text or file failed to parse or validate.
  DTAC_STATUS_INVALID_SCENARIO = 3,
  // The run or the oracle failed; see `dtac_last_error`.
  DTAC_STATUS_RUN_FAILED = 4,
  // A caller-provided buffer does not match the needed length.
  DTAC_STATUS_BAD_LENGTH = 5,
} DtacStatus;

// Finished run: the recorded trajectory and its summary values.
typedef struct DtacRun DtacRun;

// Loaded scenario: network, delay schedule, agents, and run settings.
typedef struct DtacScenario DtacScenario;

// Centralized dual-bisection solution.
typedef struct DtacOracleResult {
  // Optimal dual multiplier.
  double x_star;
  // Total cost at the optimal allocation.
  double objective;
  // Coupling residual at the optimal allocation.
  double residual;
  // True when the multiplier or parts of the allocation were fixed by
  // feasibility rather than strict convexity.
  bool nonunique;
} DtacOracleResult;

// Spectral radii of the delay-augmented consensus matrix.
typedef struct DtacSpectralReport {
  // Radius of the centered weight matrix.
  double rho_w_tilde;
  // Radius of the delay-lifted centered matrix.
  double rho_pw_tilde;
  // Homogeneous-delay prediction: radius of the centered matrix raised
  // to 1/(tau_bar + 1); exact under a constant schedule, an upper bound
  // otherwise.
  double prediction;
  // Largest delay in the schedule.
  size_t tau_bar;
  // Lifted radius is strictly below one.
  bool contractive;
  // Lifted radius is at or below the prediction.
  bool bound_satisfied;
} DtacSpectralReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the message of the most recent failure on this thread into `buf`
// (NUL-terminated, truncated to `cap` bytes) and return the full message
// length including the terminator. Returns 0 when no failure is recorded.
// Passing a null `buf` or zero `cap` just reports the needed length.
//
// # Safety
// `buf` must either be null or point to at least `cap` writable bytes.
size_t dtac_last_error(char *buf, size_t cap);

// Load a scenario file. On success writes a handle that must be released
// with `dtac_scenario_free`.
//
// # Safety
// `path` must point to a NUL-terminated string and `out` must point to a
// writable `DtacScenario*` slot.
enum DtacStatus dtac_scenario_load(const char *path, struct DtacScenario **out);

// Parse a scenario from text. `name` labels the scenario in outputs and
// error messages. On success writes a handle that must be released with
// `dtac_scenario_free`.
//
// # Safety
// `text` and `name` must point to NUL-terminated strings and `out` must
// point to a writable `DtacScenario*` slot.
enum DtacStatus dtac_scenario_parse(const char *text, const char *name, struct DtacScenario **out);

// Release a scenario handle. Null is ignored.
//
// # Safety
// `scenario` must be a handle returned by `dtac_scenario_load` or
// `dtac_scenario_parse` that has not been freed yet.
void dtac_scenario_free(struct DtacScenario *scenario);

// Number of agents in the scenario; 0 when the handle is null.
//
// # Safety
// `scenario` must be a live handle from this library or null.
size_t dtac_scenario_agents(const struct DtacScenario *scenario);

// Largest link delay in the scenario's schedule; 0 when the handle is null.
//
// # Safety
// `scenario` must be a live handle from this library or null.
size_t dtac_scenario_tau_bar(const struct DtacScenario *scenario);

// Execute the scenario. On success writes a run handle that must be
// released with `dtac_run_free`.
//
// # Safety
// `scenario` must be a live handle from this library and `out` must point
// to a writable `DtacRun*` slot.
enum DtacStatus dtac_scenario_run(const struct DtacScenario *scenario, struct DtacRun **out);

// Release a run handle. Null is ignored.
//
// # Safety
// `run` must be a handle returned by `dtac_scenario_run` that has not been
// freed yet.
void dtac_run_free(struct DtacRun *run);

// Number of agents in the run; 0 when the handle is null.
//
// # Safety
// `run` must be a live handle from this library or null.
size_t dtac_run_agents(const struct DtacRun *run);

// Number of iterations the run executed; 0 when the handle is null.
//
// # Safety
// `run` must be a live handle from this library or null.
size_t dtac_run_iterations(const struct DtacRun *run);

// Whether the final state met the run's tolerances; false when the handle
// is null.
//
// # Safety
// `run` must be a live handle from this library or null.
bool dtac_run_converged(const struct DtacRun *run);

// Total cost at the final state; NaN when the handle is null.
//
// # Safety
// `run` must be a live handle from this library or null.
double dtac_run_objective(const struct DtacRun *run);

// Mean coupling violation at the final state; NaN when the handle is null.
//
// # Safety
// `run` must be a live handle from this library or null.
double dtac_run_final_deviation(const struct DtacRun *run);

// Copy the final allocation into `out`, which must hold exactly
// `dtac_run_agents` doubles.
//
// # Safety
// `run` must be a live handle from this library and `out` must point to
// `len` writable doubles.
enum DtacStatus dtac_run_final_y(const struct DtacRun *run, double *out, size_t len);

// Copy the final local dual variables into `out`, which must hold exactly
// `dtac_run_agents` doubles.
//
// # Safety
// `run` must be a live handle from this library and `out` must point to
// `len` writable doubles.
enum DtacStatus dtac_run_final_x(const struct DtacRun *run, double *out, size_t len);

// Copy the final feasibility trackers into `out`, which must hold exactly
// `dtac_run_agents` doubles.
//
// # Safety
// `run` must be a live handle from this library and `out` must point to
// `len` writable doubles.
enum DtacStatus dtac_run_final_d(const struct DtacRun *run, double *out, size_t len);

// Solve the centralized dual problem and write its summary into `out`.
//
// # Safety
// `scenario` must be a live handle from this library and `out` must point
// to a writable `DtacOracleResult`.
enum DtacStatus dtac_scenario_oracle(const struct DtacScenario *scenario,
                                     struct DtacOracleResult *out);

// Solve the centralized dual problem and copy the optimal allocation into
// `out`, which must hold exactly `dtac_scenario_agents` doubles.
//
// # Safety
// `scenario` must be a live handle from this library and `out` must point
// to `len` writable doubles.
enum DtacStatus dtac_scenario_oracle_allocation(const struct DtacScenario *scenario,
                                                double *out,
                                                size_t len);

// Build the delay-augmented consensus matrix of the scenario and write its
// spectral summary into `out`.
//
// # Safety
// `scenario` must be a live handle from this library and `out` must point
// to a writable `DtacSpectralReport`.
enum DtacStatus dtac_scenario_spectral(const struct DtacScenario *scenario,
                                       struct DtacSpectralReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DTAC_H */
