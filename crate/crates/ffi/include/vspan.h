#ifndef VSPAN_H
#define VSPAN_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  VSPAN_STATUS_OK = 0,
  VSPAN_STATUS_NULL_ARGUMENT = 1,
  VSPAN_STATUS_INVALID_UTF8 = 2,
  VSPAN_STATUS_INVALID_INPUT = 3,
  VSPAN_STATUS_IO = 4,
  VSPAN_STATUS_OUT_OF_RANGE = 5,
  VSPAN_STATUS_PANIC = 6,
} VspanStatus;

/**
 * Opaque result of analysing one experiment.
 */
typedef struct VspanAnalysis VspanAnalysis;

typedef struct {
  int64_t root_ctx;
  uint32_t pid;
  uint32_t tid;
  uint64_t entry_ts;
  uint64_t exit_ts;
  /**
   * Sum of op lifetimes.
   */
  uint64_t t_ns;
  /**
   * `t_ns` plus the gaps between consecutive ops.
   */
  uint64_t l_ns;
  size_t op_count;
  bool open_ended;
} VspanSpanInfo;

typedef struct {
  double overhead_threshold;
  double leak_alpha;
  size_t leak_window;
  uint64_t min_stall_ns;
  double interference_factor;
  uint64_t ipc_timeout_ns;
} VspanDetectorConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *vspan_last_error(void);

/**
 * Library version as a static string.
 */
const char *vspan_version(void);

/**
 * Loads and analyses `count` trace files. `offsets` may be null (all zero)
 * or point to `count` nanosecond offsets. On success `*out` owns a handle
 * to free with [`vspan_analysis_free`].
 *
 * # Safety
 * `paths` must point to `count` NUL-terminated strings and `out` must be writable.
 */
VspanStatus vspan_analyze_files(const char *const *paths,
                                const int64_t *offsets,
                                size_t count,
                                bool strict,
                                VspanAnalysis **out);

/**
 * # Safety
 * `analysis` must come from [`vspan_analyze_files`] and not be used afterwards. Null is ignored.
 */
void vspan_analysis_free(VspanAnalysis *analysis);

/**
 * Number of reconstructed spans, or 0 for a null handle.
 *
 * # Safety
 * `analysis` must be a live handle or null.
 */
size_t vspan_analysis_span_count(const VspanAnalysis *analysis);

/**
 * Unmatched events plus context diagnostics, or 0 for a null handle.
 *
 * # Safety
 * `analysis` must be a live handle or null.
 */
size_t vspan_analysis_unmatched_count(const VspanAnalysis *analysis);

/**
 * # Safety
 * `analysis` must be a live handle and `out` writable.
 */
VspanStatus vspan_analysis_span(const VspanAnalysis *analysis, size_t index, VspanSpanInfo *out);

/**
 * Full analysis document as JSON.
 *
 * # Safety
 * `analysis` must be a live handle and `out` writable.
 */
VspanStatus vspan_analysis_json(const VspanAnalysis *analysis, char **out);

/**
 * Exports spans as `"chrome"` (trace-event JSON) or `"folded"` stacks.
 *
 * # Safety
 * `analysis` must be a live handle, `format` a NUL-terminated string and `out` writable.
 */
VspanStatus vspan_analysis_export(const VspanAnalysis *analysis, const char *format, char **out);

/**
 * Fills `out` with the default detector thresholds.
 *
 * # Safety
 * `out` must be writable.
 */
VspanStatus vspan_detector_config_default(VspanDetectorConfig *out);

/**
 * Runs every detector and writes the reports as a JSON array. `config` may
 * be null for defaults. `report_count` may be null.
 *
 * # Safety
 * `analysis` must be a live handle, `out` writable, and `config`/`report_count` valid or null.
 */
VspanStatus vspan_analysis_detect(const VspanAnalysis *analysis,
                                  const VspanDetectorConfig *config,
                                  char **out,
                                  size_t *report_count);

/**
 * Simulates `scenario` with `seed` and writes userspace.jsonl, kernel.jsonl
 * and sidecar.json into `out_dir`, creating it when missing.
 *
 * # Safety
 * `scenario` and `out_dir` must be NUL-terminated strings.
 */
VspanStatus vspan_simulate(const char *scenario, uint64_t seed, const char *out_dir);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void vspan_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VSPAN_H */
