#ifndef TAYLORSHIFT_H
#define TAYLORSHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsKernel {
  TS_KERNEL_SOFTMAX = 0,
  TS_KERNEL_TAYLOR_DIRECT = 1,
  TS_KERNEL_TAYLOR_EFFICIENT = 2,
  TS_KERNEL_AUTO = 3,
} TsKernel;

typedef enum TsNormMode {
  TS_NORM_MODE_NONE = 0,
  TS_NORM_MODE_INPUT = 1,
  TS_NORM_MODE_INPUT_OUTPUT = 2,
} TsNormMode;

/**
 * Result codes.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_DIMENSION_MISMATCH = 3,
  TS_STATUS_NON_FINITE = 4,
  TS_STATUS_OVERFLOW = 5,
  TS_STATUS_ALLOCATION = 6,
  TS_STATUS_BUFFER_TOO_SMALL = 7,
  TS_STATUS_PANIC = 8,
} TsStatus;

/**
 * Opaque matrix handle.
 */
typedef struct TsMatrix TsMatrix;

/**
 * Per-head counts for `h` heads of width `d`. Counts that do not fit in 64
 * bits make the call return `TS_STATUS_OVERFLOW`.
 */
typedef struct TsCostReport {
  uint64_t n;
  uint64_t d;
  uint64_t h;
  uint64_t ops_direct;
  uint64_t ops_eff;
  uint64_t entries_direct;
  uint64_t entries_eff;
} TsCostReport;

typedef struct TsTransitionPoints {
  uint64_t d;
  double n0_exact;
  uint64_t n0;
  double n1_exact;
  uint64_t n1;
} TsTransitionPoints;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ts_last_error(void);

/**
 * Creates a `rows × cols` matrix. `data` holds `rows·cols` values in
 * row-major order, or is null for zeros.
 */
enum TsStatus ts_matrix_new(size_t rows, size_t cols, const double *data, struct TsMatrix **out);

/**
 * Releases a handle. Null is ignored.
 */
void ts_matrix_free(struct TsMatrix *m);

/**
 * Row count, or 0 for a null handle.
 */
size_t ts_matrix_rows(const struct TsMatrix *m);

/**
 * Column count, or 0 for a null handle.
 */
size_t ts_matrix_cols(const struct TsMatrix *m);

/**
 * Copies all entries in row-major order into `out`, which holds `len`
 * values.
 */
enum TsStatus ts_matrix_copy_data(const struct TsMatrix *m, double *out, size_t len);

/**
 * Single-head attention. `kernel` takes a `TsKernel` value and `norm_mode`
 * a `TsNormMode` value. On success `*out` receives a new handle owned by the
 * caller.
 */
enum TsStatus ts_attention(const struct TsMatrix *q,
                           const struct TsMatrix *k,
                           const struct TsMatrix *v,
                           double tau,
                           uint32_t kernel,
                           uint32_t norm_mode,
                           struct TsMatrix **out);

enum TsStatus ts_cost_report(uint64_t n, uint64_t d, uint64_t h, struct TsCostReport *out);

enum TsStatus ts_transition_points(uint64_t d, struct TsTransitionPoints *out);

/**
 * Operation-optimal per-head dimension (the positive root of
 * `9d³ + 10d² = 4`).
 */
enum TsStatus ts_optimal_head_dim_ops(double *out);

/**
 * Memory-optimal per-head dimension for sequence length `n`.
 */
enum TsStatus ts_optimal_head_dim_entries(uint64_t n, double *out);

/**
 * Peak simultaneously live entries of one forward call; `kernel` takes a
 * `TsKernel` value.
 */
enum TsStatus ts_peak_entries(uint32_t kernel, size_t n, size_t d, uint64_t *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAYLORSHIFT_H */
