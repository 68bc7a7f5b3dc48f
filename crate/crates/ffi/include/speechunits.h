#ifndef SPEECHUNITS_H
#define SPEECHUNITS_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SuStatus {
  SU_STATUS_OK = 0,
  SU_STATUS_NULL_POINTER = 1,
  SU_STATUS_INVALID_ARGUMENT = 2,
  SU_STATUS_IO = 3,
  SU_STATUS_FORMAT = 4,
  SU_STATUS_COMPUTE = 5,
  SU_STATUS_PANIC = 6,
} SuStatus;

/**
 * k-means codebook.
 */
typedef struct SuCodebook SuCodebook;

/**
 * Frame-level feature matrix.
 */
typedef struct SuFeatures SuFeatures;

/**
 * Unit sequence with per-unit run lengths.
 */
typedef struct SuUnits SuUnits;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library from the same thread.
 */
const char *su_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *su_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SuStatus su_features_read(const char *path, struct SuFeatures **out);

/**
 * Copies `rows * cols` row-major values into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` floats; `out` must be writable.
 */
enum SuStatus su_features_new(const float *data,
                              size_t rows,
                              size_t cols,
                              float frame_rate_hz,
                              struct SuFeatures **out);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
size_t su_features_rows(const struct SuFeatures *m);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
size_t su_features_cols(const struct SuFeatures *m);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void su_features_free(struct SuFeatures *m);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SuStatus su_codebook_read(const char *path, struct SuCodebook **out);

/**
 * # Safety
 * `cb` must be a live handle; `path` a NUL-terminated string.
 */
enum SuStatus su_codebook_write(const struct SuCodebook *cb, const char *path);

/**
 * Fits a codebook on `n` matrices.
 *
 * # Safety
 * `mats` must point to `n` live handles; `out` must be writable.
 */
enum SuStatus su_codebook_fit(const struct SuFeatures *const *mats,
                              size_t n,
                              size_t k,
                              uint64_t seed,
                              size_t max_iters,
                              double tol,
                              struct SuCodebook **out);

/**
 * # Safety
 * `cb` must be null or a live handle.
 */
size_t su_codebook_k(const struct SuCodebook *cb);

/**
 * # Safety
 * `cb` must be null or a live handle.
 */
size_t su_codebook_dim(const struct SuCodebook *cb);

/**
 * # Safety
 * `cb` must be null or a handle not yet freed.
 */
void su_codebook_free(struct SuCodebook *cb);

/**
 * Nearest-centroid unit for every frame, one unit per frame.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SuStatus su_kmeans_assign(const struct SuFeatures *m,
                               const struct SuCodebook *cb,
                               struct SuUnits **out);

/**
 * Duration-penalized segmentation, one unit per frame; pass the result to
 * [`su_units_dedup`] for segment-level runs.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SuStatus su_dpdp_segment(const struct SuFeatures *m,
                              const struct SuCodebook *cb,
                              double lambda,
                              size_t max_segment_frames,
                              struct SuUnits **out);

/**
 * # Safety
 * `u` must be a live handle; `out` must be writable.
 */
enum SuStatus su_units_dedup(const struct SuUnits *u, struct SuUnits **out);

/**
 * # Safety
 * `u` must be null or a live handle.
 */
size_t su_units_len(const struct SuUnits *u);

/**
 * Unit id and run length at position `i`.
 *
 * # Safety
 * `u` must be a live handle; `unit` and `duration` writable or null.
 */
enum SuStatus su_units_get(const struct SuUnits *u, size_t i, uint32_t *unit, uint32_t *duration);

/**
 * # Safety
 * `u` must be null or a handle not yet freed.
 */
void su_units_free(struct SuUnits *u);

/**
 * Phone and cluster purity of frame-level unit ids against frame-level
 * phone ids.
 *
 * # Safety
 * `units` and `phones` must point to `n` values; outputs writable or null.
 */
enum SuStatus su_purity(const uint32_t *units,
                        const uint32_t *phones,
                        size_t n,
                        double *phone_purity_out,
                        double *cluster_purity_out);

/**
 * Mixes `noise` into `signal` at the requested SNR, writing `signal_len`
 * samples to `out`. Output is hard-clipped to [-1, 1] when `clip` is
 * non-zero; the number of clipped samples goes to `clipped_out`.
 *
 * # Safety
 * Buffers must hold the stated number of samples; outputs writable or null.
 */
enum SuStatus su_mix_noise_at_snr(const float *signal,
                                  size_t signal_len,
                                  const float *noise,
                                  size_t noise_len,
                                  double snr_db,
                                  uint64_t seed,
                                  int32_t clip,
                                  float *out,
                                  double *gain_out,
                                  size_t *clipped_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEECHUNITS_H */
