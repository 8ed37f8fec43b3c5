/* C interface to the rgbd-avatar pipeline.
 *
 * Landmark arrays are 70 (x, y) float pairs in 256x256 reference pixels.
 * Every call that can fail returns an rgbd_status; rgbd_last_error() then
 * describes the failure on the calling thread. Handles are opaque and must
 * be released with their _free function. */

#ifndef RGBD_AVATAR_H
#define RGBD_AVATAR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define RGBD_ABI_VERSION 1
#define RGBD_LANDMARK_COUNT 70
#define RGBD_FRAME_LEN 298

typedef enum rgbd_status {
    RGBD_OK = 0,
    RGBD_NULL_POINTER = 1,
    RGBD_INVALID_ARGUMENT = 2,
    RGBD_IO = 3,
    RGBD_FORMAT = 4,
    RGBD_STATE = 5,
    RGBD_PANIC = 6
} rgbd_status;

typedef struct rgbd_expression {
    float mouth_open;
    float smile;
    float brow_raise_left;
    float brow_raise_right;
    float eye_open_left;
    float eye_open_right;
    float gaze_x;
    float gaze_y;
    float jaw_shift;
} rgbd_expression;

typedef struct RgbdGenerator rgbd_generator;
typedef struct RgbdCalibrator rgbd_calibrator;

/* Valid until the next call on this thread; empty after a success. */
const char *rgbd_last_error(void);
uint32_t rgbd_abi_version(void);
size_t rgbd_frame_len(void);

rgbd_status rgbd_encode_frame(const float *xy, uint32_t sequence, uint64_t timestamp_us,
                              uint8_t *out, size_t out_len);
/* sequence and timestamp_us may be NULL. */
rgbd_status rgbd_decode_frame(const uint8_t *bytes, size_t len, float *xy_out,
                              uint32_t *sequence, uint64_t *timestamp_us);

rgbd_status rgbd_synth_landmarks(uint64_t identity_seed, const rgbd_expression *expression,
                                 float *xy_out);

rgbd_status rgbd_generator_open(const char *weights_path, rgbd_generator **out);
void rgbd_generator_free(rgbd_generator *generator);
/* Side of the square output, 0 for NULL. */
uint32_t rgbd_generator_resolution(const rgbd_generator *generator);
rgbd_status rgbd_generator_set_postproc(rgbd_generator *generator, uint32_t erode_radius,
                                        uint8_t clip_near, uint8_t clip_far);
/* rgb_out takes 3*n*n bytes, depth_out n*n depth codes. */
rgbd_status rgbd_generator_run(rgbd_generator *generator, const float *xy,
                               uint8_t *rgb_out, size_t rgb_len,
                               uint8_t *depth_out, size_t depth_len);
/* Each view takes 3*n*n bytes. */
rgbd_status rgbd_generator_render_stereo(rgbd_generator *generator, const float *xy,
                                         uint8_t *left_rgb, uint8_t *right_rgb, size_t len);

rgbd_status rgbd_calibrator_open(const char *dataset_dir, rgbd_calibrator **out);
void rgbd_calibrator_free(rgbd_calibrator *calibrator);
/* xy_frames holds frames * 140 floats of a neutral face. */
rgbd_status rgbd_calibrator_calibrate(rgbd_calibrator *calibrator, const float *xy_frames,
                                      size_t frames);
/* clamped_out, if not NULL, receives 70 flags. */
rgbd_status rgbd_calibrator_apply(const rgbd_calibrator *calibrator, const float *xy,
                                  float *xy_out, uint8_t *clamped_out);

#ifdef __cplusplus
}
#endif

#endif
