#ifndef PVC_H
#define PVC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum PvcStatus {
  PVC_STATUS_OK = 0,
  // A required pointer argument was null.
  PVC_STATUS_NULL_POINTER = 1,
  // An argument is out of range or inconsistent with another.
  PVC_STATUS_INVALID_ARGUMENT = 2,
  // A file could not be read or written.
  PVC_STATUS_IO = 3,
  // A file or buffer is malformed.
  PVC_STATUS_FORMAT = 4,
  // A required input (alignment, artifact) is missing.
  PVC_STATUS_MISSING_INPUT = 5,
  // A configuration value is invalid.
  PVC_STATUS_CONFIG = 6,
  // A computation produced an invalid result.
  PVC_STATUS_NUMERIC = 7,
  // A panic was caught at the boundary.
  PVC_STATUS_INTERNAL = 8,
} PvcStatus;

// Prosody handling of a conversion.
typedef enum PvcMode {
  PVC_MODE_NONE = 0,
  PVC_MODE_BASE = 1,
  PVC_MODE_RDPF = 2,
  PVC_MODE_ADPF = 3,
} PvcMode;

// Trained product codebook.
typedef struct PvcCodebook PvcCodebook;

// Everything needed to convert a waveform.
typedef struct PvcConverter PvcConverter;

// Time-major matrix of per-frame features.
typedef struct PvcMatrix PvcMatrix;

// Mono waveform.
typedef struct PvcWaveform PvcWaveform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty when none. The
// pointer stays valid until the next failing call on the same thread.
const char *pvc_last_error(void);

// Library version as a static NUL-terminated string.
const char *pvc_version(void);

// Copies `len` samples in [-1, 1] at `sample_rate` Hz into a new waveform.
enum PvcStatus pvc_waveform_new(const double *samples,
                                size_t len,
                                uint32_t sample_rate,
                                struct PvcWaveform **out);

size_t pvc_waveform_len(const struct PvcWaveform *w);

uint32_t pvc_waveform_sample_rate(const struct PvcWaveform *w);

// Copies the samples into `buf`, which must hold `pvc_waveform_len` values.
enum PvcStatus pvc_waveform_copy(const struct PvcWaveform *w, double *buf, size_t capacity);

void pvc_waveform_free(struct PvcWaveform *w);

// Log-mel spectrogram with the default analysis settings (24 kHz, 80 bins,
// 50 ms window, 10 ms hop). The input is resampled when needed.
enum PvcStatus pvc_mel_spectrogram(const struct PvcWaveform *w, struct PvcMatrix **out);

// Copies a row-major `rows x cols` prosody matrix with the given hop.
enum PvcStatus pvc_prosody_new(const double *data,
                               size_t rows,
                               size_t cols,
                               double hop_seconds,
                               struct PvcMatrix **out);

size_t pvc_matrix_rows(const struct PvcMatrix *m);

size_t pvc_matrix_cols(const struct PvcMatrix *m);

// Copies the matrix row-major into `buf`, which must hold rows * cols values.
enum PvcStatus pvc_matrix_copy(const struct PvcMatrix *m, double *buf, size_t capacity);

void pvc_matrix_free(struct PvcMatrix *m);

// Reads a codebook file written by `pvc train-codebook`.
enum PvcStatus pvc_codebook_load(const char *file, struct PvcCodebook **out);

// Nearest-centroid indices of every mel frame, two per frame
// (frame-major). `indices` must hold 2 * frames values.
enum PvcStatus pvc_codebook_quantize(const struct PvcCodebook *cb,
                                     const struct PvcMatrix *mel,
                                     uint32_t *indices,
                                     size_t capacity);

void pvc_codebook_free(struct PvcCodebook *cb);

// Fixed-rate filter with deterministic selection: each block of `tau`
// frames repeats its last frame.
enum PvcStatus pvc_rdpf(const struct PvcMatrix *prosody, size_t tau, struct PvcMatrix **out);

// Loads a converter from a `pvc` work directory (projection, codebook and
// checkpoint). `config` is the run configuration used to build it, or null
// for the defaults.
enum PvcStatus pvc_converter_load(const char *work_dir,
                                  const char *config,
                                  struct PvcConverter **out);

// Number of speakers the converter was trained on.
size_t pvc_converter_num_speakers(const struct PvcConverter *c);

// Converts `source` to speaker `target` and reconstructs a waveform.
// `alignment` is a phone alignment file (TSV or TextGrid), required in
// adpf mode and otherwise may be null. `mode` must be the mode the
// checkpoint was trained in.
enum PvcStatus pvc_convert(const struct PvcConverter *c,
                           const struct PvcWaveform *source,
                           const char *alignment,
                           size_t target,
                           enum PvcMode mode,
                           struct PvcWaveform **out);

void pvc_converter_free(struct PvcConverter *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVC_H */
