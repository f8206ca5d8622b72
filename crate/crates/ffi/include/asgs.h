#ifndef ASGS_H
#define ASGS_H

/* Generated by cbindgen from the asgs-ffi crate. Do not edit. */

#include <stddef.h>

/**
 * Result code of every fallible call.
 */
typedef enum AsgsStatus {
  ASGS_STATUS_OK = 0,
  ASGS_STATUS_NULL_POINTER = 1,
  ASGS_STATUS_INVALID_ARGUMENT = 2,
  ASGS_STATUS_CONFIG = 3,
  ASGS_STATUS_IO = 4,
  /**
   * Solver breakdown, singular matrix or divergent subscale series.
   */
  ASGS_STATUS_NUMERICAL = 5,
  ASGS_STATUS_PANIC = 6,
} AsgsStatus;

/**
 * Run configuration; starts from the library defaults.
 */
typedef struct AsgsConfig AsgsConfig;

/**
 * Result table of a convergence study.
 */
typedef struct AsgsReport AsgsReport;

/**
 * One row of a study. Missing orders (first row) are NaN.
 */
typedef struct AsgsStudyRow {
  size_t grid;
  size_t dofs;
  double error;
  double eoc;
  double eta;
  double eoc_eta;
} AsgsStudyRow;

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *asgs_last_error(void);

/**
 * New configuration with default settings; free with [`asgs_config_free`].
 */
struct AsgsConfig *asgs_config_new(void);

/**
 * # Safety
 * `cfg` must be null or a pointer from [`asgs_config_new`] not yet freed.
 */
void asgs_config_free(struct AsgsConfig *cfg);

/**
 * Sets one option, using the keys of the configuration file format
 * (for example `"case"`, `"grids"`, `"dt"`, `"out"`).
 *
 * # Safety
 * `cfg` must be a live configuration handle; `key` and `value` must be
 * NUL-terminated strings.
 */
enum AsgsStatus asgs_config_set(struct AsgsConfig *cfg, const char *key, const char *value);

/**
 * Applies a `key = value` configuration file.
 *
 * # Safety
 * `cfg` must be a live configuration handle; `path` a NUL-terminated string.
 */
enum AsgsStatus asgs_config_load(struct AsgsConfig *cfg, const char *path);

/**
 * Runs the configured study. On success `*out` receives a report handle
 * to be released with [`asgs_report_free`]; on failure it is set to null.
 *
 * # Safety
 * `cfg` must be a live configuration handle and `out` a writable pointer.
 */
enum AsgsStatus asgs_study_run(const struct AsgsConfig *cfg, struct AsgsReport **out);

/**
 * # Safety
 * `report` must be null or a handle from [`asgs_study_run`] not yet freed.
 */
void asgs_report_free(struct AsgsReport *report);

/**
 * Number of grid rows; 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live report handle.
 */
size_t asgs_report_len(const struct AsgsReport *report);

/**
 * Copies row `index` into `*row`.
 *
 * # Safety
 * `report` must be a live report handle and `row` a writable pointer.
 */
enum AsgsStatus asgs_report_row(const struct AsgsReport *report,
                                size_t index,
                                struct AsgsStudyRow *row);

/**
 * Writes the `grid,error,eoc` table as a NUL-terminated string into `buf`.
 * `*needed` always receives the required capacity including the NUL; if
 * `capacity` is smaller nothing is written and `InvalidArgument` returned.
 *
 * # Safety
 * `report` must be a live report handle, `needed` writable, and `buf` valid
 * for `capacity` bytes (it may be null when `capacity` is 0).
 */
enum AsgsStatus asgs_report_csv(const struct AsgsReport *report,
                                char *buf,
                                size_t capacity,
                                size_t *needed);

/**
 * Observed order `log2(coarse / fine)` of two errors under mesh halving.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum AsgsStatus asgs_eoc(double coarse, double fine, double *out);

#endif  /* ASGS_H */
