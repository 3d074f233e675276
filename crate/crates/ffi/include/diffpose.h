#ifndef DIFFPOSE_H
#define DIFFPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DpStatus {
  DP_STATUS_OK = 0,
  DP_STATUS_NULL_POINTER = 1,
  DP_STATUS_DEGENERATE_INPUT = 2,
  DP_STATUS_INVALID_SCHEDULE = 3,
  DP_STATUS_OUT_OF_RANGE = 4,
  DP_STATUS_DIMENSION_MISMATCH = 5,
  DP_STATUS_INVALID_CONFIG = 6,
  DP_STATUS_EMPTY_INPUT = 7,
  DP_STATUS_NON_FINITE_LOSS = 8,
  DP_STATUS_FORMAT = 9,
  DP_STATUS_IO = 10,
  DP_STATUS_INVALID_ARGUMENT = 11,
  DP_STATUS_PANIC = 12,
} DpStatus;

/**
 * Joint-rotation layout of pose vectors.
 */
typedef enum DpRepresentation {
  DP_REPRESENTATION_SIX_D = 0,
  DP_REPRESENTATION_AXIS_ANGLE = 1,
} DpRepresentation;

/**
 * Opaque body model.
 */
typedef struct DpBodyModel DpBodyModel;

/**
 * Opaque trained model loaded from a checkpoint.
 */
typedef struct DpPredictor DpPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *dp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dp_version(void);

/**
 * Gram–Schmidt map from a 6D rotation to a row-major 3×3 matrix.
 *
 * # Safety
 * `sixd` must point to 6 readable doubles and `out` to 9 writable doubles.
 */
enum DpStatus dp_sixd_to_rotmat(const double *sixd, double *out);

/**
 * Builds the built-in body model for `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum DpStatus dp_body_model_default(uint64_t seed, struct DpBodyModel **out);

/**
 * Loads a body-model asset written by the library.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum DpStatus dp_body_model_load(const char *path, struct DpBodyModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, not freed before.
 */
void dp_body_model_free(struct DpBodyModel *model);

/**
 * Number of joints, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dp_body_model_num_joints(const struct DpBodyModel *model);

/**
 * Number of vertices, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dp_body_model_num_vertices(const struct DpBodyModel *model);

/**
 * Posed mesh and its regressed joints. `theta` holds one rotation per joint
 * in `repr`, `beta` ten shape coefficients. `vertices_out` receives
 * `3 · num_vertices` doubles and `joints_out`, if not null, `3 · num_joints`.
 *
 * # Safety
 * Every non-null pointer must reference at least the stated number of doubles.
 */
enum DpStatus dp_body_model_mesh(const struct DpBodyModel *model,
                                 enum DpRepresentation repr,
                                 const double *theta,
                                 size_t theta_len,
                                 const double *beta,
                                 size_t beta_len,
                                 double *vertices_out,
                                 size_t vertices_len,
                                 double *joints_out,
                                 size_t joints_len);

/**
 * Loads a checkpoint for inference.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum DpStatus dp_predictor_load(const char *path, struct DpPredictor **out);

/**
 * # Safety
 * `pred` must be null or a handle from this library, not freed before.
 */
void dp_predictor_free(struct DpPredictor *pred);

/**
 * Length of one pose hypothesis, or 0 for a null handle.
 *
 * # Safety
 * `pred` must be null or a live handle.
 */
size_t dp_predictor_pose_dim(const struct DpPredictor *pred);

/**
 * Length of the conditioning vector, or 0 for a null handle.
 *
 * # Safety
 * `pred` must be null or a live handle.
 */
size_t dp_predictor_cond_dim(const struct DpPredictor *pred);

/**
 * Rotation layout of the hypotheses.
 *
 * # Safety
 * `pred` must be a live handle and `out` writable.
 */
enum DpStatus dp_predictor_representation(const struct DpPredictor *pred,
                                          enum DpRepresentation *out);

/**
 * Draws `n` pose hypotheses for observation `z` into `out`
 * (`n · pose_dim` doubles, hypothesis-major). The same `(seed, index, h)`
 * always yields the same hypothesis `h`.
 *
 * # Safety
 * `z` must hold `z_len` doubles and `out` `out_len` writable doubles.
 */
enum DpStatus dp_predictor_sample(const struct DpPredictor *pred,
                                  const double *z,
                                  size_t z_len,
                                  uint64_t seed,
                                  size_t index,
                                  size_t n,
                                  double *out,
                                  size_t out_len);

/**
 * Regressed shape (10 coefficients) and camera `(scale, tx, ty)` for `z`.
 *
 * # Safety
 * `z` must hold `z_len` doubles, `beta_out` 10 and `cam_out` 3 writable doubles.
 */
enum DpStatus dp_predictor_shape_camera(const struct DpPredictor *pred,
                                        const double *z,
                                        size_t z_len,
                                        double *beta_out,
                                        double *cam_out);

/**
 * Root-aligned mean per-joint position error in millimetres. Both arrays
 * hold `num_joints` packed points in metres; joint 0 is the root.
 *
 * # Safety
 * `pred` and `gt` must each hold `3 · num_joints` doubles; `out` is writable.
 */
enum DpStatus dp_mpjpe(const double *pred, const double *gt, size_t num_joints, double *out);

/**
 * Mean per-joint error in millimetres after the best similarity alignment.
 *
 * # Safety
 * `pred` and `gt` must each hold `3 · num_joints` doubles; `out` is writable.
 */
enum DpStatus dp_pa_mpjpe(const double *pred, const double *gt, size_t num_joints, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFPOSE_H */
