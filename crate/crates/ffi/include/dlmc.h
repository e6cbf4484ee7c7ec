#ifndef DLMC_H
#define DLMC_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Library failures share their numbers with the CLI exit codes.
 */
typedef enum {
  DLMC_STATUS_OK = 0,
  DLMC_STATUS_PARSE = 10,
  DLMC_STATUS_VALIDATION = 11,
  DLMC_STATUS_INFEASIBLE = 12,
  DLMC_STATUS_NUMERICAL = 13,
  DLMC_STATUS_IO = 14,
  DLMC_STATUS_INPUT = 15,
  /**
   * A required pointer argument was null.
   */
  DLMC_STATUS_NULL_ARGUMENT = 20,
  /**
   * A string argument was not valid UTF-8.
   */
  DLMC_STATUS_INVALID_UTF8 = 21,
  /**
   * Node, period or index outside the result.
   */
  DLMC_STATUS_OUT_OF_RANGE = 22,
  DLMC_STATUS_PANIC = 99,
} DlmcStatus;

/**
 * Which nodal marginal cost: real (P) or reactive (Q) demand.
 */
typedef enum {
  DLMC_KIND_P = 0,
  DLMC_KIND_Q = 1,
} DlmcKind;

/**
 * Parsed feeder case.
 */
typedef struct DlmcFeeder DlmcFeeder;

/**
 * Outcome of a full solve and decomposition.
 */
typedef struct DlmcResult DlmcResult;

/**
 * One decomposed marginal cost, in $/p.u.h.
 */
typedef struct {
  double substation;
  double real_loss;
  double reactive_loss;
  double voltage;
  double ampacity;
  double transformer;
  double total;
  double solver_dual;
  /**
   * Relative gap between `total` and `solver_dual`.
   */
  double gap;
} DlmcComponents;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into the library on the
 * same thread.
 */
const char *dlmc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlmc_version(void);

/**
 * Loads a feeder case from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
DlmcStatus dlmc_feeder_load(const char *path, DlmcFeeder **out);

/**
 * Parses a feeder case from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
DlmcStatus dlmc_feeder_parse(const char *json, DlmcFeeder **out);

/**
 * # Safety
 * `feeder` must come from `dlmc_feeder_load`/`dlmc_feeder_parse` or be null.
 */
void dlmc_feeder_free(DlmcFeeder *feeder);

/**
 * Node count including the root. Zero for a null handle.
 *
 * # Safety
 * `feeder` must be a live handle or null.
 */
size_t dlmc_feeder_node_count(const DlmcFeeder *feeder);

/**
 * Periods in the planning day. Zero for a null handle.
 *
 * # Safety
 * `feeder` must be a live handle or null.
 */
size_t dlmc_feeder_period_count(const DlmcFeeder *feeder);

/**
 * Id of node `index` (0 is the root), owned by the handle. Null when out
 * of range.
 *
 * # Safety
 * `feeder` must be a live handle or null.
 */
const char *dlmc_feeder_node_id(const DlmcFeeder *feeder, size_t index);

/**
 * Solves the day-ahead problem and decomposes every nodal marginal cost.
 *
 * `horizon_end` is `"cycle"`, `"extended"` or `"extended:E"`; null means
 * the default.
 *
 * # Safety
 * `feeder` must be a live handle, `horizon_end` null or NUL-terminated,
 * and `out` a valid pointer.
 */
DlmcStatus dlmc_run(const DlmcFeeder *feeder, const char *horizon_end, DlmcResult **out);

/**
 * # Safety
 * `result` must come from `dlmc_run` or be null.
 */
void dlmc_result_free(DlmcResult *result);

/**
 * Optimal objective in $. NaN for a null handle.
 *
 * # Safety
 * `result` must be a live handle or null.
 */
double dlmc_result_objective(const DlmcResult *result);

/**
 * Largest relative gap between decomposed totals and solver duals. NaN
 * for a null handle.
 *
 * # Safety
 * `result` must be a live handle or null.
 */
double dlmc_result_max_gap(const DlmcResult *result);

/**
 * Decomposition at node `node` (1-based, the root has none) and period
 * `period` (1-based).
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
DlmcStatus dlmc_result_components(const DlmcResult *result,
                                  size_t node,
                                  size_t period,
                                  DlmcKind kind,
                                  DlmcComponents *out);

/**
 * Writes the full output bundle (JSON report and CSV tables) into `dir`.
 *
 * # Safety
 * `result` must be a live handle and `dir` NUL-terminated.
 */
DlmcStatus dlmc_result_write(const DlmcResult *result, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLMC_H */
