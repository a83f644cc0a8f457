#ifndef CADENZA_H
#define CADENZA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum CadenzaStatus {
  CADENZA_STATUS_OK = 0,
  CADENZA_STATUS_NULL_POINTER = 1,
  CADENZA_STATUS_INVALID_ARGUMENT = 2,
  CADENZA_STATUS_INVALID_DIMENSION = 3,
  CADENZA_STATUS_NOT_FOUND = 4,
  CADENZA_STATUS_IO = 5,
  CADENZA_STATUS_PARSE = 6,
  CADENZA_STATUS_CONFIG = 7,
  CADENZA_STATUS_SAMPLE_RATE = 8,
  CADENZA_STATUS_UNDEFINED_METRIC = 9,
  CADENZA_STATUS_NUMERIC_DIVERGENCE = 10,
  CADENZA_STATUS_BUFFER_TOO_SMALL = 11,
  CADENZA_STATUS_INTERNAL = 12,
  CADENZA_STATUS_PANIC = 13,
} CadenzaStatus;

// Stereo audio at the library sample rate.
typedef struct CadenzaAudio CadenzaAudio;

// Melody, dynamics and rhythm conditions of one clip.
typedef struct CadenzaConditions CadenzaConditions;

// A loaded checkpoint together with its latent codec.
typedef struct CadenzaModel CadenzaModel;

// Settings of [`cadenza_generate`]. Start from
// [`cadenza_generate_params_default`].
typedef struct CadenzaGenerateParams {
  // Output length in seconds.
  double duration_s;
  uint64_t seed;
  uint32_t steps;
  double lambda_text;
  double lambda_attr;
  double lambda_audio;
} CadenzaGenerateParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cadenza_version(void);

// Copies the last error message of this thread into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// excluding the terminator; 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t cadenza_last_error(char *buf, size_t len);

// Builds audio from interleaved samples. `channels` is 1 or 2;
// `sample_rate` must be 44100.
//
// # Safety
// `samples` must point to `frames * channels` floats; `out` must be valid.
enum CadenzaStatus cadenza_audio_from_interleaved(const float *samples,
                                                  size_t frames,
                                                  uint32_t channels,
                                                  uint32_t sample_rate,
                                                  struct CadenzaAudio **out);

// Reads a WAV file, resampling to 44.1 kHz and duplicating mono.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum CadenzaStatus cadenza_audio_read_wav(const char *p, struct CadenzaAudio **out);

// Writes 32-bit float stereo WAV.
//
// # Safety
// `audio` must be a live handle; `path` a NUL-terminated string.
enum CadenzaStatus cadenza_audio_write_wav(const struct CadenzaAudio *audio, const char *p);

// Number of sample frames (per channel).
//
// # Safety
// `audio` must be a live handle; `out` must be valid.
enum CadenzaStatus cadenza_audio_frames(const struct CadenzaAudio *audio, size_t *out);

// Copies the samples interleaved (L, R, L, R, ...) into `buf`, which must
// hold `2 * frames` floats.
//
// # Safety
// `audio` must be a live handle; `buf` must point to `capacity` floats.
enum CadenzaStatus cadenza_audio_copy_interleaved(const struct CadenzaAudio *audio,
                                                  float *buf,
                                                  size_t capacity);

// # Safety
// `audio` must be null or a handle not freed before.
void cadenza_audio_free(struct CadenzaAudio *audio);

// Extracts melody, dynamics and rhythm with the built-in estimators.
//
// # Safety
// `audio` must be a live handle; `out` must be valid.
enum CadenzaStatus cadenza_conditions_extract(const struct CadenzaAudio *audio,
                                              struct CadenzaConditions **out);

// Reads `melody.cond`, `dynamics.cond` and `rhythm.cond` (any subset)
// from a directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be valid.
enum CadenzaStatus cadenza_conditions_read_dir(const char *dir, struct CadenzaConditions **out);

// Writes the present conditions into a directory, creating it.
//
// # Safety
// `conds` must be a live handle; `dir` a NUL-terminated string.
enum CadenzaStatus cadenza_conditions_write_dir(const struct CadenzaConditions *conds,
                                                const char *dir);

// # Safety
// `conds` must be null or a handle not freed before.
void cadenza_conditions_free(struct CadenzaConditions *conds);

// Loads a checkpoint written by `cadenza train`.
//
// # Safety
// `p` must be a NUL-terminated string; `out` must be valid.
enum CadenzaStatus cadenza_model_load(const char *p, struct CadenzaModel **out);

// Whether the model carries an attribute adapter (1) or not (0).
//
// # Safety
// `model` must be a live handle; `out` must be valid.
enum CadenzaStatus cadenza_model_has_attribute_adapter(const struct CadenzaModel *model,
                                                       int32_t *out);

// # Safety
// `model` must be null or a handle not freed before.
void cadenza_model_free(struct CadenzaModel *model);

// 4 s, seed 0, 50 steps, guidance scales of the text-to-music preset.
struct CadenzaGenerateParams cadenza_generate_params_default(void);

// Text-to-music generation, optionally following attribute conditions
// (`conds` may be null). The result is deterministic for fixed inputs.
//
// # Safety
// `model` must be a live handle, `caption` a NUL-terminated string,
// `params` valid, `conds` null or a live handle, `out` valid.
enum CadenzaStatus cadenza_generate(const struct CadenzaModel *model,
                                    const char *caption,
                                    const struct CadenzaGenerateParams *params,
                                    const struct CadenzaConditions *conds,
                                    struct CadenzaAudio **out);

// Fraction of frames whose dominant pitch class agrees.
//
// # Safety
// Handles must be live; `out` must be valid.
enum CadenzaStatus cadenza_melody_accuracy(const struct CadenzaAudio *reference,
                                           const struct CadenzaAudio *generated,
                                           double *out);

// Pearson correlation of the generated loudness curve with the dynamics
// condition in `conds`.
//
// # Safety
// Handles must be live; `out` must be valid.
enum CadenzaStatus cadenza_dynamics_correlation(const struct CadenzaAudio *generated,
                                                const struct CadenzaConditions *conds,
                                                double *out);

// Beat F1 of the generated audio against beats estimated on the
// reference.
//
// # Safety
// Handles must be live; `out` must be valid.
enum CadenzaStatus cadenza_rhythm_f1(const struct CadenzaAudio *reference,
                                     const struct CadenzaAudio *generated,
                                     double *out);

// Smoothness of the transition at `boundary_s` seconds; lower means a
// more abrupt seam.
//
// # Safety
// `audio` must be a live handle; `out` must be valid.
enum CadenzaStatus cadenza_smoothness_value(const struct CadenzaAudio *audio,
                                            double boundary_s,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CADENZA_H */
