#ifndef MACAP_H
#define MACAP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MacapStatus {
  MACAP_STATUS_OK = 0,
  MACAP_STATUS_NULL_POINTER = 1,
  MACAP_STATUS_INVALID_ARGUMENT = 2,
  MACAP_STATUS_PARSE = 3,
  MACAP_STATUS_CONVERGENCE = 4,
  MACAP_STATUS_NUMERIC = 5,
  MACAP_STATUS_ESTIMATION = 6,
  MACAP_STATUS_IO = 7,
  MACAP_STATUS_PANIC = 8,
} MacapStatus;

typedef enum MacapCommand {
  MACAP_COMMAND_REGION = 0,
  MACAP_COMMAND_BOUNDARY = 1,
  MACAP_COMMAND_VALIDATE = 2,
  MACAP_COMMAND_POLICY = 3,
} MacapCommand;

// Region trace of one scenario run.
typedef struct MacapRegionTrace MacapRegionTrace;

// Parsed scenario.
typedef struct MacapScenario MacapScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into the library on the same thread.
const char *macap_last_error(void);

// Parses a scenario document (TOML text).
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum MacapStatus macap_scenario_parse(const char *text, struct MacapScenario **out);

// # Safety
// `scenario` must come from [`macap_scenario_parse`] and not be used again.
void macap_scenario_free(struct MacapScenario *scenario);

// Number of configurations the scenario expands to.
//
// # Safety
// `scenario` must be a live handle.
enum MacapStatus macap_scenario_run_count(const struct MacapScenario *scenario, uintptr_t *out);

// Copies the hex fingerprint (64 characters plus NUL) into `buf`.
//
// # Safety
// `buf` must hold at least `len` bytes.
enum MacapStatus macap_scenario_fingerprint(const struct MacapScenario *scenario,
                                            char *buf,
                                            uintptr_t len);

// Runs a command over the whole scenario and writes its files to `out_dir`.
//
// # Safety
// `scenario` must be a live handle and `out_dir` a NUL-terminated string.
enum MacapStatus macap_run(const struct MacapScenario *scenario,
                           enum MacapCommand command,
                           const char *out_dir);

// Traces the region of configuration `run`.
//
// # Safety
// `scenario` must be a live handle and `out` a writable pointer.
enum MacapStatus macap_trace_region(const struct MacapScenario *scenario,
                                    uintptr_t run,
                                    struct MacapRegionTrace **out);

// # Safety
// `trace` must come from [`macap_trace_region`] and not be used again.
void macap_trace_free(struct MacapRegionTrace *trace);

// Number of λ points in the trace.
//
// # Safety
// `trace` must be a live handle.
enum MacapStatus macap_trace_len(const struct MacapRegionTrace *trace, uintptr_t *out);

// One trace point. `converged` is 0 for failed points, whose capacities
// are NaN.
//
// # Safety
// `trace` must be a live handle; the outputs must be writable.
enum MacapStatus macap_trace_point(const struct MacapRegionTrace *trace,
                                   uintptr_t index,
                                   double *lambda1,
                                   double *c1,
                                   double *c2,
                                   int32_t *converged);

// Single-user mutual information in bits of a preset input at `snr`
// (linear).
//
// # Safety
// `input` must be a NUL-terminated string and `bits` writable.
enum MacapStatus macap_mi_single(const char *input, double snr, double *bits);

// Effective capacity of a weighted per-frame rate table; `symbols` is `T·B`.
//
// # Safety
// `rates` and `weights` must point to `len` doubles; `out` must be writable.
enum MacapStatus macap_effective_capacity(const double *rates,
                                          const double *weights,
                                          uintptr_t len,
                                          double theta,
                                          double symbols,
                                          double *out);

// Simulates the buffer fed at `arrival` and served by the rate table, then
// fits the tail decay rate.
//
// # Safety
// `rates` and `weights` must point to `len` doubles; outputs must be writable.
enum MacapStatus macap_queue_decay(const double *rates,
                                   const double *weights,
                                   uintptr_t len,
                                   double arrival,
                                   uintptr_t frames,
                                   double symbols,
                                   uint64_t seed,
                                   double *theta_hat,
                                   double *std_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MACAP_H */
