#ifndef PANELFE_H
#define PANELFE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PanelfeStatus {
  PANELFE_STATUS_OK = 0,
  PANELFE_STATUS_NULL_POINTER = 1,
  PANELFE_STATUS_INVALID_ARGUMENT = 2,
  PANELFE_STATUS_PARSE_ERROR = 3,
  PANELFE_STATUS_BALANCE_ERROR = 4,
  PANELFE_STATUS_SINGULAR_DESIGN = 5,
  PANELFE_STATUS_BOOTSTRAP_ERROR = 6,
  PANELFE_STATUS_JACKKNIFE_ERROR = 7,
  PANELFE_STATUS_IO_ERROR = 8,
  /**
   * Requested quantity is absent, e.g. standard errors that could not be
   * computed.
   */
  PANELFE_STATUS_UNAVAILABLE = 9,
  PANELFE_STATUS_BUFFER_TOO_SMALL = 10,
  PANELFE_STATUS_PANIC = 11,
} PanelfeStatus;

typedef enum PanelfeEstimator {
  PANELFE_ESTIMATOR_OLS = 0,
  PANELFE_ESTIMATOR_LS = 1,
  PANELFE_ESTIMATOR_GFE = 2,
  PANELFE_ESTIMATOR_GFE_SPLIT = 3,
} PanelfeEstimator;

/**
 * Opaque balanced panel.
 */
typedef struct PanelfePanel PanelfePanel;

/**
 * Opaque estimation result.
 */
typedef struct PanelfeReport PanelfeReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread (empty after a
 * success). Valid until the next call into the library on this thread.
 */
const char *panelfe_last_error(void);

/**
 * Static name of a status code.
 */
const char *panelfe_status_name(enum PanelfeStatus status);

/**
 * Build a panel from row-major `y` (N·T values) and `x` (K·N·T values).
 *
 * # Safety
 * `y` and `x` must point to at least `n*t` and `k*n*t` readable doubles.
 */
enum PanelfeStatus panelfe_panel_new(const double *y,
                                     const double *x,
                                     size_t n,
                                     size_t t,
                                     size_t k,
                                     struct PanelfePanel **out);

/**
 * Read a long-format CSV `unit_id,time_id,y,x1..xK`.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum PanelfeStatus panelfe_panel_load_csv(const char *path, size_t k, struct PanelfePanel **out);

/**
 * Draw replication `rep` of the built-in simulation design (β⁰ = 1).
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum PanelfeStatus panelfe_panel_simulate(size_t n,
                                          size_t t,
                                          double theta,
                                          uint64_t seed,
                                          size_t rep,
                                          struct PanelfePanel **out);

/**
 * # Safety
 * `panel` must be null or a handle from this library, released once.
 */
void panelfe_panel_free(struct PanelfePanel *panel);

/**
 * # Safety
 * `panel` must be a live handle; the output pointers may be null.
 */
enum PanelfeStatus panelfe_panel_dims(const struct PanelfePanel *panel,
                                      size_t *n,
                                      size_t *t,
                                      size_t *k);

/**
 * Estimate with default numerical settings. `factors` is R for LS and the
 * number of initial factors for the grouped estimators (ignored for OLS);
 * `proxies` is the number of leading factors clustered.
 *
 * # Safety
 * `panel` must be a live handle and `out` a valid handle slot.
 */
enum PanelfeStatus panelfe_estimate(const struct PanelfePanel *panel,
                                    enum PanelfeEstimator estimator,
                                    size_t factors,
                                    size_t proxies,
                                    bool jackknife,
                                    struct PanelfeReport **out);

/**
 * # Safety
 * `report` must be null or a handle from this library, released once.
 */
void panelfe_report_free(struct PanelfeReport *report);

/**
 * Number of coefficients, 0 for a null handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
size_t panelfe_report_k(const struct PanelfeReport *report);

/**
 * Estimator tag such as `GFE_JK`, owned by the report.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
const char *panelfe_report_tag(const struct PanelfeReport *report);

/**
 * Copy β̂ into `buf` (capacity `len`).
 *
 * # Safety
 * `report` must be a live handle and `buf` writable for `len` doubles.
 */
enum PanelfeStatus panelfe_report_beta(const struct PanelfeReport *report, double *buf, size_t len);

/**
 * Copy the standard errors into `buf`; `Unavailable` when none were
 * computed.
 *
 * # Safety
 * `report` must be a live handle and `buf` writable for `len` doubles.
 */
enum PanelfeStatus panelfe_report_se(const struct PanelfeReport *report, double *buf, size_t len);

/**
 * Look up a metadata entry such as `G`, `C` or `objective`.
 *
 * # Safety
 * `report` must be a live handle, `key` NUL-terminated and `value` writable.
 */
enum PanelfeStatus panelfe_report_metadata(const struct PanelfeReport *report,
                                           const char *key,
                                           double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANELFE_H */
