#ifndef PVFLOW_H
#define PVFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PvfStatus {
  PVF_STATUS_OK = 0,
  PVF_STATUS_NULL_POINTER = 1,
  PVF_STATUS_INVALID_ARGUMENT = 2,
  PVF_STATUS_SHAPE = 3,
  PVF_STATUS_K_TOO_LARGE = 4,
  PVF_STATUS_INVALID_CLOUD = 5,
  PVF_STATUS_UNEQUAL_SIZES = 6,
  PVF_STATUS_IO = 7,
  /**
   * Bad magic, truncated file, unsupported version or unparsable text.
   */
  PVF_STATUS_FORMAT = 8,
  PVF_STATUS_NON_FINITE_VALUE = 9,
  PVF_STATUS_CONFIG = 10,
  PVF_STATUS_WEIGHTS = 11,
  PVF_STATUS_NON_FINITE = 12,
  /**
   * A Rust panic was caught at the boundary.
   */
  PVF_STATUS_INTERNAL = 13,
} PvfStatus;

/**
 * A point cloud.
 */
typedef struct PvfCloud PvfCloud;

/**
 * Pipeline configuration.
 */
typedef struct PvfConfig PvfConfig;

/**
 * A per-point flow field.
 */
typedef struct PvfFlow PvfFlow;

/**
 * Encoder weights.
 */
typedef struct PvfWeights PvfWeights;

/**
 * Flow accuracy against ground truth. Percentages are in [0, 100].
 */
typedef struct PvfEvalReport {
  size_t n;
  double epe;
  double as_pct;
  double ar_pct;
  double out_pct;
} PvfEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next pvflow call on the same thread.
 */
const char *pvf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pvf_version(void);

/**
 * Default configuration.
 */
enum PvfStatus pvf_config_new(struct PvfConfig **out);

/**
 * Parses a `key = value` configuration file.
 */
enum PvfStatus pvf_config_load(const char *path, struct PvfConfig **out);

/**
 * Sets one key; the configuration is left unchanged if the result would be
 * invalid.
 */
enum PvfStatus pvf_config_set(struct PvfConfig *config, const char *key, const char *value);

void pvf_config_free(struct PvfConfig *config);

/**
 * Copies `n` points from a row-major `n×3` array.
 */
enum PvfStatus pvf_cloud_from_xyz(const double *xyz, size_t n, struct PvfCloud **out);

/**
 * Reads an SFPC or ASCII `.xyz` file.
 */
enum PvfStatus pvf_cloud_read(const char *path, struct PvfCloud **out);

enum PvfStatus pvf_cloud_write(const struct PvfCloud *cloud, const char *path);

/**
 * Number of points, or 0 for NULL.
 */
size_t pvf_cloud_len(const struct PvfCloud *cloud);

void pvf_cloud_free(struct PvfCloud *cloud);

/**
 * Seeded random weights shaped for `config`.
 */
enum PvfStatus pvf_weights_init(const struct PvfConfig *config,
                                uint64_t seed,
                                struct PvfWeights **out);

/**
 * Loads a PVWT file, checking every tensor against `config`.
 */
enum PvfStatus pvf_weights_load(const char *path,
                                const struct PvfConfig *config,
                                struct PvfWeights **out);

enum PvfStatus pvf_weights_save(const struct PvfWeights *weights, const char *path);

void pvf_weights_free(struct PvfWeights *weights);

/**
 * Scene flow from `source` to `target`.
 */
enum PvfStatus pvf_estimate(const struct PvfCloud *source,
                            const struct PvfCloud *target,
                            const struct PvfWeights *weights,
                            const struct PvfConfig *config,
                            struct PvfFlow **out);

/**
 * Copies `n` row-major flow vectors.
 */
enum PvfStatus pvf_flow_from_xyz(const double *xyz, size_t n, struct PvfFlow **out);

enum PvfStatus pvf_flow_read(const char *path, struct PvfFlow **out);

enum PvfStatus pvf_flow_write(const struct PvfFlow *flow, const char *path);

/**
 * Number of vectors, or 0 for NULL.
 */
size_t pvf_flow_len(const struct PvfFlow *flow);

/**
 * Copies the flow into `out` as row-major `n×3`; `capacity` counts doubles
 * and must be at least `3 * pvf_flow_len(flow)`.
 */
enum PvfStatus pvf_flow_copy(const struct PvfFlow *flow, double *out, size_t capacity);

void pvf_flow_free(struct PvfFlow *flow);

/**
 * End-point error and accuracy percentages of `pred` against `gt`.
 */
enum PvfStatus pvf_evaluate(const struct PvfFlow *pred,
                            const struct PvfFlow *gt,
                            struct PvfEvalReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVFLOW_H */
