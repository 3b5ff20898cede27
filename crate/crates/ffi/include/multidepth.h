/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MULTIDEPTH_H
#define MULTIDEPTH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum MdStatus {
  MD_STATUS_OK = 0,
  MD_STATUS_NULL_POINTER = 1,
  MD_STATUS_INVALID_INPUT = 2,
  MD_STATUS_IO = 3,
  MD_STATUS_FORMAT = 4,
  MD_STATUS_SHAPE = 5,
  MD_STATUS_NUMERIC = 6,
  MD_STATUS_CONFIG = 7,
  MD_STATUS_BUFFER_TOO_SMALL = 8,
  MD_STATUS_PANIC = 9,
} MdStatus;

/**
 * Opaque refiner: network weights plus pipeline settings.
 */
typedef struct MdRefiner MdRefiner;

/**
 * Pinhole intrinsics in pixels; pixel centers at integer coordinates.
 */
typedef struct MdIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
} MdIntrinsics;

/**
 * Metrics of one prediction against ground truth.
 */
typedef struct MdMetrics {
  double delta_0_25;
  double delta_0_5;
  double delta_1;
  double si_log;
  double abs_rel;
  double rmse;
  double f_score;
  uint64_t valid_pixels;
} MdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *md_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into the library on the same thread.
 */
const char *md_last_error(void);

/**
 * Loads a trained network from an MDPT weights file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MdStatus md_refiner_load(const char *path, struct MdRefiner **out);

/**
 * Creates the identity refiner (zero output layer), which leaves depth
 * unchanged when the input noise is disabled.
 *
 * # Safety
 * `out` must be writable.
 */
enum MdStatus md_refiner_new_identity(uint32_t levels,
                                      uint32_t base_channels,
                                      struct MdRefiner **out);

/**
 * Releases a refiner; NULL is ignored.
 *
 * # Safety
 * `refiner` must come from this library and not be used afterwards.
 */
void md_refiner_free(struct MdRefiner *refiner);

/**
 * Sets the number of refinement cycles (default 5; 0 returns the input).
 *
 * # Safety
 * `refiner` must be a live refiner.
 */
enum MdStatus md_refiner_set_iterations(struct MdRefiner *refiner, uint32_t iterations);

/**
 * Sets the seed of the sampling and input-noise streams.
 *
 * # Safety
 * `refiner` must be a live refiner.
 */
enum MdStatus md_refiner_set_seed(struct MdRefiner *refiner, uint64_t seed);

/**
 * Sets the relative input-noise σ applied before every refinement (≥ 0).
 *
 * # Safety
 * `refiner` must be a live refiner.
 */
enum MdStatus md_refiner_set_noise(struct MdRefiner *refiner, double sigma);

/**
 * Refines `depth` (height·width floats) guided by `rgb` (height·width·3
 * floats). `labels` is an optional instance label image (0 = unlabeled)
 * whose regions become segment samples. Holes in the result are written as 0.
 *
 * # Safety
 * All non-null pointers must reference buffers of the stated sizes;
 * `out_depth` may alias neither input.
 */
enum MdStatus md_refine(const struct MdRefiner *refiner,
                        const float *rgb,
                        const float *depth,
                        const uint16_t *labels,
                        size_t height,
                        size_t width,
                        float *out_depth);

/**
 * Depth metrics of `pred` against `gt` (both height·width floats). `tau` is
 * the F-score distance threshold in meters.
 *
 * # Safety
 * Buffers must hold height·width floats; `out` must be writable.
 */
enum MdStatus md_evaluate(const float *pred,
                          const float *gt,
                          size_t height,
                          size_t width,
                          struct MdIntrinsics intrinsics,
                          double tau,
                          struct MdMetrics *out);

/**
 * Un-projects valid pixels of `depth`, scaled by `scale`, into `out_xyz`
 * (x, y, z triples in row-major pixel order). `count` receives the number of
 * points; when `capacity` points do not fit nothing is written and
 * `BufferTooSmall` is returned, so a first call with capacity 0 sizes the buffer.
 *
 * # Safety
 * `depth` must hold height·width floats, `out_xyz` 3·capacity doubles (may be
 * NULL when capacity is 0), `count` must be writable.
 */
enum MdStatus md_unproject(const float *depth,
                           size_t height,
                           size_t width,
                           struct MdIntrinsics intrinsics,
                           double scale,
                           double *out_xyz,
                           size_t capacity,
                           size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIDEPTH_H */
