#ifndef CHRONO_DCE_H
#define CHRONO_DCE_H

#include <stddef.h>
#include <stdbool.h>

typedef enum CdceStatus {
  CDCE_STATUS_OK = 0,
  CDCE_STATUS_NULL_POINTER = 1,
  CDCE_STATUS_INVALID_ARGUMENT = 2,
  CDCE_STATUS_SHAPE = 3,
  CDCE_STATUS_IO = 4,
  CDCE_STATUS_FORMAT = 5,
  CDCE_STATUS_HASH_MISMATCH = 6,
  CDCE_STATUS_NON_FINITE = 7,
  CDCE_STATUS_BUFFER_TOO_SMALL = 8,
  CDCE_STATUS_PANIC = 9,
} CdceStatus;

// A trained recognizer together with the input pipeline it was trained on.
typedef struct CdceModel CdceModel;

// A skeleton clip (`C×T×N×M` coordinates plus valid length and person count).
typedef struct CdceSequence CdceSequence;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *cdce_last_error(void);

// Library version as a static NUL-terminated string.
const char *cdce_version(void);

// Unnormalized DCT-2 of `x[0..t]` into `out[0..t]`:
// `d_k = Σ_t x_t cos(π/T (t + ½) k)`.
//
// # Safety
// `x` and `out` must point to `t` readable / writable doubles.
enum CdceStatus cdce_dct2(const double *x, size_t t, double *out);

// Inverse of [`cdce_dct2`].
//
// # Safety
// `d` and `out` must point to `t` readable / writable doubles.
enum CdceStatus cdce_idct2(const double *d, size_t t, double *out);

// Chronological loss of `v[0..n]`: sum of `max(0, v_t - v_{t+1})`.
//
// # Safety
// `v` must point to `n` doubles and `out` to one writable double.
enum CdceStatus cdce_crl_loss(const double *v, size_t n, double *out);

// First-minus-last baseline loss of `v[0..n]`.
//
// # Safety
// `v` must point to `n` doubles and `out` to one writable double.
enum CdceStatus cdce_naive_chron_loss(const double *v, size_t n, double *out);

// Builds a sequence from row-major `C×T×N×M` coordinates.
//
// # Safety
// `coords` must point to `c*t*n*m` doubles; `out` must be writable.
enum CdceStatus cdce_sequence_new(const double *coords,
                                  size_t c,
                                  size_t t,
                                  size_t n,
                                  size_t m,
                                  size_t valid_len,
                                  size_t persons,
                                  struct CdceSequence **out);

// Reads a sequence file written by the library.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CdceStatus cdce_sequence_load(const char *path, struct CdceSequence **out);

// Number of frames in the sequence, 0 for a null handle.
//
// # Safety
// `seq` must be null or a live handle.
size_t cdce_sequence_frames(const struct CdceSequence *seq);

// # Safety
// `seq` must be null or a handle not yet freed.
void cdce_sequence_free(struct CdceSequence *seq);

// Cosine encoding of the sequence coordinates with `k` basis sequences,
// written row-major as `((k + include_original)·C)×T×N×M`.
//
// # Safety
// `seq` must be a live handle, `out` must hold `out_len` doubles and
// `written` must be null or writable.
enum CdceStatus cdce_dce_encode(const struct CdceSequence *seq,
                                size_t k,
                                bool include_original,
                                double *out,
                                size_t out_len,
                                size_t *written);

// Loads a checkpoint manifest (the `.json` next to its `.bin` payload).
// The checkpoint must record the input pipeline it was trained with.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum CdceStatus cdce_model_load(const char *path, struct CdceModel **out);

// Number of output classes, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t cdce_model_num_classes(const struct CdceModel *model);

// Runs the checkpoint's pipeline and the recognizer on a raw sequence and
// writes the class logits.
//
// # Safety
// Handles must be live, `logits` must hold `len` doubles and `written`
// must be null or writable.
enum CdceStatus cdce_model_logits(const struct CdceModel *model,
                                  const struct CdceSequence *seq,
                                  double *logits,
                                  size_t len,
                                  size_t *written);

// Per-frame chronological scores of the sequence (one per output frame).
//
// # Safety
// Handles must be live, `scores` must hold `len` doubles and `written`
// must be null or writable.
enum CdceStatus cdce_model_chron_scores(const struct CdceModel *model,
                                        const struct CdceSequence *seq,
                                        double *scores,
                                        size_t len,
                                        size_t *written);

// # Safety
// `model` must be null or a handle not yet freed.
void cdce_model_free(struct CdceModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHRONO_DCE_H */
