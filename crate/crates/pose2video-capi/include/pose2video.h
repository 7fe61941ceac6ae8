/* C interface for the pose2video motion transfer pipeline. */

#pragma once

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Result of every fallible call. Anything other than `Ok` leaves a message
 * readable via `p2v_last_error`.
 */
typedef enum P2vStatus {
  /**
   * The call succeeded.
   */
  P2V_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  P2V_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  P2V_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was structurally invalid (wrong length, bad value).
   */
  P2V_STATUS_INVALID_ARGUMENT = 3,
  /**
   * An output buffer was too small for the result.
   */
  P2V_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * The underlying operation failed; see `p2v_last_error`.
   */
  P2V_STATUS_OPERATION_FAILED = 5,
  /**
   * A panic was caught at the language boundary.
   */
  P2V_STATUS_PANIC = 6,
} P2vStatus;

/**
 * Opaque handle to a loaded generator pair. Create with
 * `p2v_pipeline_open`, release with `p2v_pipeline_close`.
 */
typedef struct P2vPipeline P2vPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *p2v_version(void);

/**
 * Message describing the most recent failure on the calling thread, as a
 * NUL-terminated string. Empty until a call fails. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *p2v_last_error(void);

/**
 * Number of joints in the builtin skeleton (one `(x, y, confidence)` triplet
 * each).
 */
uint32_t p2v_pose_joint_count(void);

/**
 * Number of channels in a rasterized pose map (one per body part).
 */
uint32_t p2v_pose_map_channels(void);

/**
 * Rasterize one skeleton into part-channel occupancy maps.
 *
 * `keypoints` holds `3 * p2v_pose_joint_count()` floats in canvas pixels.
 * `thickness` is the stroke width in pixels; pass 0 to use the default for
 * the canvas height. `out` receives `p2v_pose_map_channels() * height *
 * width` floats (0 or 1), channel-major.
 *
 * # Safety
 * `keypoints` must point to `keypoint_len` readable floats and `out` to
 * `out_len` writable floats; the ranges must not overlap.
 */
enum P2vStatus p2v_rasterize_pose(const float *keypoints,
                                  size_t keypoint_len,
                                  uint32_t height,
                                  uint32_t width,
                                  float thickness,
                                  float *out,
                                  size_t out_len);

/**
 * Structural similarity between two images of the same size, both given as
 * `3 * height * width` floats in `[0, 1]`, channel-major. Writes a value in
 * `[-1, 1]` to `out`.
 *
 * # Safety
 * `a` and `b` must each point to `3 * height * width` readable floats and
 * `out` to a writable double.
 */
enum P2vStatus p2v_ssim(const float *a,
                        const float *b,
                        uint32_t height,
                        uint32_t width,
                        double *out);

/**
 * Load a pipeline from checkpoint files. `stage2_path` may be null to run
 * the coarse generator alone. On success writes a handle to `out`; the
 * caller owns it and must release it with `p2v_pipeline_close`.
 *
 * # Safety
 * `stage1_path` must be a NUL-terminated string, `stage2_path` null or
 * NUL-terminated, and `out` a writable pointer slot.
 */
enum P2vStatus p2v_pipeline_open(const char *stage1_path,
                                 const char *stage2_path,
                                 struct P2vPipeline **out);

/**
 * Release a pipeline handle. Null is ignored.
 *
 * # Safety
 * `pipeline` must be null or a handle from `p2v_pipeline_open` that has not
 * been closed yet.
 */
void p2v_pipeline_close(struct P2vPipeline *pipeline);

/**
 * Output canvas size of the loaded generators.
 *
 * # Safety
 * `pipeline` must be a live handle; `height`/`width` must be writable.
 */
enum P2vStatus p2v_pipeline_resolution(const struct P2vPipeline *pipeline,
                                       uint32_t *height,
                                       uint32_t *width);

/**
 * Temporal context radius K: each output frame conditions on poses
 * `t - K ..= t + K` (or a causal window when the checkpoint was trained
 * that way).
 *
 * # Safety
 * `pipeline` must be a live handle; `out` must be writable.
 */
enum P2vStatus p2v_pipeline_context_radius(const struct P2vPipeline *pipeline, uint32_t *out);

/**
 * Whether a stage-2 refinement checkpoint is loaded.
 *
 * # Safety
 * `pipeline` must be a live handle; `out` must be writable.
 */
enum P2vStatus p2v_pipeline_has_refinement(const struct P2vPipeline *pipeline, bool *out);

/**
 * Render a keypoint file to numbered PNG frames (`000000.png`, ...) in
 * `out_dir`, creating the directory if needed. Wild sequences are rescaled
 * and torso-normalized exactly as the `infer` command does. Writes the
 * number of frames to `frames_written` when non-null.
 *
 * # Safety
 * `pipeline` must be a live handle; paths must be NUL-terminated strings;
 * `frames_written` must be null or writable.
 */
enum P2vStatus p2v_pipeline_render_file(const struct P2vPipeline *pipeline,
                                        const char *keypoints_path,
                                        const char *out_dir,
                                        size_t *frames_written);

/**
 * Render a single pose to one frame. The pose is replicated across the
 * temporal window, so this is the still-image path; for sequences use
 * `p2v_pipeline_render_file`. `keypoints` holds `3 *
 * p2v_pose_joint_count()` floats in canvas pixels (no rescaling is
 * applied). `out` receives `3 * height * width` floats in `[0, 1]`,
 * channel-major.
 *
 * # Safety
 * `keypoints` must point to `keypoint_len` readable floats and `out` to
 * `out_len` writable floats.
 */
enum P2vStatus p2v_pipeline_render_pose(const struct P2vPipeline *pipeline,
                                        const float *keypoints,
                                        size_t keypoint_len,
                                        float *out,
                                        size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
