#ifndef CMDT_H
#define CMDT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmdtStatus {
  CMDT_STATUS_OK = 0,
  CMDT_STATUS_NULL_POINTER = 1,
  CMDT_STATUS_INVALID_ARGUMENT = 2,
  CMDT_STATUS_SHAPE = 3,
  CMDT_STATUS_IO = 4,
  CMDT_STATUS_FORMAT = 5,
  CMDT_STATUS_NUMERIC = 6,
  CMDT_STATUS_PANIC = 7,
} CmdtStatus;

typedef enum CmdtSamplerMode {
  CMDT_SAMPLER_MODE_ANCESTRAL = 0,
  CMDT_SAMPLER_MODE_DDIM = 1,
} CmdtSamplerMode;

/**
 * Trained component denoiser handle.
 */
typedef struct CmdtModel CmdtModel;

/**
 * Noise schedule handle.
 */
typedef struct CmdtSchedule CmdtSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cmdt_last_error_message(char *buf, size_t len);

/**
 * NUL-terminated toolkit version; static storage.
 */
const char *cmdt_version(void);

/**
 * Linear beta schedule with `steps` entries.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum CmdtStatus cmdt_schedule_new(size_t steps,
                                  double beta_start,
                                  double beta_end,
                                  struct CmdtSchedule **out);

/**
 * # Safety
 * `sched` must be null or a handle from [`cmdt_schedule_new`] not yet freed.
 */
void cmdt_schedule_free(struct CmdtSchedule *sched);

/**
 * `ᾱ_t` for `t` in `0..=T`.
 *
 * # Safety
 * `sched` must be a live schedule handle and `out` writable.
 */
enum CmdtStatus cmdt_schedule_alpha_bar(const struct CmdtSchedule *sched, size_t t, double *out);

/**
 * # Safety
 * `sched` must be a live schedule handle and `out` writable.
 */
enum CmdtStatus cmdt_schedule_steps(const struct CmdtSchedule *sched, size_t *out);

/**
 * Load a checkpoint from a NUL-terminated UTF-8 path.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid handle slot.
 */
enum CmdtStatus cmdt_model_load(const char *path, struct CmdtModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`cmdt_model_load`] not yet freed.
 */
void cmdt_model_free(struct CmdtModel *model);

/**
 * Motion width of the model (13 lips, 51 expression, 6 pose).
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum CmdtStatus cmdt_model_motion_dim(const struct CmdtModel *model, size_t *out);

/**
 * Recursive long-form generation. `audio` holds `n_frames × d_audio`
 * row-major features, `identity` the 70-d identity frame; `out` receives
 * `n_frames × 70` values.
 *
 * # Safety
 * All handles must be live; buffers must hold the stated element counts.
 */
enum CmdtStatus cmdt_generate_long(const struct CmdtModel *lips,
                                   const struct CmdtModel *expression,
                                   const struct CmdtModel *pose,
                                   const struct CmdtSchedule *sched,
                                   const double *audio,
                                   size_t n_frames,
                                   size_t d_audio,
                                   double fps,
                                   const double *identity,
                                   enum CmdtSamplerMode mode,
                                   size_t ddim_steps,
                                   size_t chunk_len,
                                   uint64_t seed,
                                   double *out,
                                   size_t out_len);

/**
 * Similarity transform mapping `src` onto `dst` (`k` points each, stored
 * as interleaved x, y). Writes scale, rotation angle, tx, ty to `out[0..4]`.
 *
 * # Safety
 * `src` and `dst` must hold `2k` values and `out` must hold 4.
 */
enum CmdtStatus cmdt_kabsch_umeyama(const double *src, const double *dst, size_t k, double *out);

/**
 * Landmark distance over `n` frames of `k` points; `align` non-zero
 * aligns each frame first. Degenerate frames are dropped and counted.
 *
 * # Safety
 * `gen` and `gt` must hold `n·k·2` values; outputs must be writable.
 */
enum CmdtStatus cmdt_lmd(const double *gen,
                         const double *gt,
                         size_t n,
                         size_t k,
                         int32_t align,
                         double *out_value,
                         size_t *out_used,
                         size_t *out_dropped);

/**
 * Average displacement of landmark `nose` from its first-frame position.
 *
 * # Safety
 * `points` must hold `n·k·2` values and `out` must be writable.
 */
enum CmdtStatus cmdt_ahd(const double *points, size_t n, size_t k, size_t nose, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMDT_H */
