#ifndef DDPRIOR_H
#define DDPRIOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum DdpStatus {
  DDP_STATUS_OK = 0,
  DDP_STATUS_NULL_POINTER = 1,
  DDP_STATUS_INVALID_UTF8 = 2,
  DDP_STATUS_PARSE = 3,
  DDP_STATUS_VALIDATION = 4,
  DDP_STATUS_NUMERIC = 5,
  DDP_STATUS_OUT_OF_RANGE = 6,
  DDP_STATUS_PANIC = 7,
} DdpStatus;

typedef enum DdpMode {
  DDP_MODE_EXACT = 0,
  DDP_MODE_ZETA_APPROX = 1,
  DDP_MODE_QUADRATIC = 2,
  DDP_MODE_QUADRATIC_EXACT = 3,
} DdpMode;

typedef enum DdpFitPath {
  DDP_FIT_PATH_UNCONSTRAINED = 0,
  DDP_FIT_PATH_ZERO_INTERCEPT = 1,
  DDP_FIT_PATH_ZERO_SLOPE = 2,
  DDP_FIT_PATH_NO_IDIOSYNCRATIC = 3,
} DdpFitPath;

/**
 * Count tables for every node of a network.
 */
typedef struct DdpCounts DdpCounts;

/**
 * Estimated CP-tables for every node.
 */
typedef struct DdpEstimate DdpEstimate;

/**
 * Parsed network.
 */
typedef struct DdpNetwork DdpNetwork;

typedef struct DdpPi {
  double pi0;
  double pi1;
  double pi2;
} DdpPi;

typedef struct DdpPiFit {
  struct DdpPi pi;
  enum DdpFitPath path;
  double rss;
  size_t samples;
  bool degenerate;
} DdpPiFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ddp_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer is valid until the next call into the library on this thread.
 */
const char *ddp_last_error(void);

/**
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum DdpStatus ddp_zeta_exact(double l1, double l2, double l3, double tol, double *out);

/**
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum DdpStatus ddp_zeta_approx(double l1, double l2, double l3, double *out);

/**
 * Row correlation `rho(alpha, gamma)`.
 *
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum DdpStatus ddp_rho(double alpha, double gamma, enum DdpMode mode, double *out);

/**
 * MSE-ratio for a symmetric MDD scenario with `n_parents` parents of the
 * given domain sizes, `totals[row]` cases per row and `n_values` means.
 *
 * # Safety
 * `select`, `truth` and `out` must be valid; `radices`, `totals` and `mu`
 * must point to `n_parents`, `prod(radices)` and `n_values` elements.
 */
enum DdpStatus ddp_mse_ratio(const struct DdpPi *select,
                             const struct DdpPi *truth,
                             const size_t *radices,
                             size_t n_parents,
                             const uint64_t *totals,
                             double alpha,
                             const double *mu,
                             size_t n_values,
                             size_t target,
                             enum DdpMode mode,
                             double *out);

/**
 * Parses a JSON network description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DdpStatus ddp_network_from_json(const char *json, struct DdpNetwork **out);

/**
 * # Safety
 * `net` must be NULL or a handle from [`ddp_network_from_json`] not yet freed.
 */
void ddp_network_free(struct DdpNetwork *net);

/**
 * # Safety
 * `net` must be a live handle.
 */
size_t ddp_network_node_count(const struct DdpNetwork *net);

/**
 * Counts complete tuples from CSV text with a header of node names.
 *
 * # Safety
 * `net` must be a live handle, `csv` NUL-terminated, `out` valid.
 */
enum DdpStatus ddp_counts_from_csv(const struct DdpNetwork *net,
                                   const char *csv,
                                   struct DdpCounts **out);

/**
 * # Safety
 * `counts` must be NULL or a handle from [`ddp_counts_from_csv`] not yet freed.
 */
void ddp_counts_free(struct DdpCounts *counts);

/**
 * `n_f` for `row` of `node`.
 *
 * # Safety
 * `counts` must be a live handle, `node` NUL-terminated, `out` valid.
 */
enum DdpStatus ddp_counts_row_total(const struct DdpCounts *counts,
                                    const char *node,
                                    size_t row,
                                    uint64_t *out);

/**
 * Fits `pi` from all parented tables under flat per-node priors.
 *
 * # Safety
 * `counts` must be a live handle and `out` valid.
 */
enum DdpStatus ddp_fit_pi(const struct DdpCounts *counts, struct DdpPiFit *out);

/**
 * Estimates every node. `prior_json` may be NULL for flat priors with the
 * default `pi`.
 *
 * # Safety
 * `net` and `counts` must be live handles from the same network,
 * `prior_json` NULL or NUL-terminated, `out` valid.
 */
enum DdpStatus ddp_estimate(const struct DdpNetwork *net,
                            const struct DdpCounts *counts,
                            const char *prior_json,
                            struct DdpEstimate **out);

/**
 * # Safety
 * `est` must be NULL or a handle from [`ddp_estimate`] not yet freed.
 */
void ddp_estimate_free(struct DdpEstimate *est);

/**
 * Number of rows and values of `node`'s table.
 *
 * # Safety
 * `est` must be a live handle, `node` NUL-terminated, outputs valid.
 */
enum DdpStatus ddp_estimate_shape(const struct DdpEstimate *est,
                                  const char *node,
                                  size_t *rows,
                                  size_t *values);

/**
 * `theta_hat_{x|row}` for `node`; `clamped` (nullable) receives whether the
 * value was clamped.
 *
 * # Safety
 * `est` must be a live handle, `node` NUL-terminated, `out` valid, and
 * `clamped` NULL or valid.
 */
enum DdpStatus ddp_estimate_theta(const struct DdpEstimate *est,
                                  const char *node,
                                  size_t row,
                                  size_t x,
                                  double *out,
                                  bool *clamped);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDPRIOR_H */
