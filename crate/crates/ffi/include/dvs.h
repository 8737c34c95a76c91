#ifndef DVS_H
#define DVS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DVS_NUM_CLASSES 7

#define DVS_MEMBER_COUNT 3

typedef enum DvsStatus {
  DVS_STATUS_OK = 0,
  DVS_STATUS_NULL_POINTER = 1,
  DVS_STATUS_INVALID_CONFIG = 2,
  DVS_STATUS_MISSING_FILE = 3,
  DVS_STATUS_NUMERIC = 4,
  DVS_STATUS_BUFFER_TOO_SMALL = 5,
  DVS_STATUS_PANIC = 6,
} DvsStatus;

typedef enum DvsFusionRule {
  DVS_FUSION_RULE_L2 = 0,
  DVS_FUSION_RULE_MAX_CONFIDENCE = 1,
} DvsFusionRule;

// Loaded ensemble with the pipeline settings used for streams.
typedef struct DvsEnsemble DvsEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until
// the next failing call on the same thread.
const char *dvs_last_error_message(void);

// Loads an ensemble directory written by `dvs train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum DvsStatus dvs_ensemble_load(const char *path, struct DvsEnsemble **out);

// # Safety
// `handle` must come from [`dvs_ensemble_load`] and not be used afterwards.
void dvs_ensemble_free(struct DvsEnsemble *handle);

// Rows and columns of the feature blob the members expect.
//
// # Safety
// `handle` must be live; `rows` and `cols` writable.
enum DvsStatus dvs_ensemble_input_shape(const struct DvsEnsemble *handle,
                                        size_t *rows,
                                        size_t *cols);

// Classifies one raw (unnormalized) row-major feature blob. Writes the
// fused scores to `fused[7]` and the thresholded decision to `decision`.
//
// # Safety
// `blob` must hold `len` doubles, `fused` room for 7, `decision` writable.
enum DvsStatus dvs_ensemble_classify(const struct DvsEnsemble *handle,
                                     const double *blob,
                                     size_t len,
                                     enum DvsFusionRule rule,
                                     double *fused,
                                     size_t *decision);

// Runs the full stream pipeline on channel-major i16 samples and writes the
// frame-major decision map (`frames * channels` bytes) into `decisions`.
// `frames` receives the frame count; with a too-small buffer the call
// returns `BufferTooSmall` after setting it.
//
// # Safety
// `samples` must hold `channels * len` values and `decisions` `capacity` bytes.
enum DvsStatus dvs_ensemble_infer_stream(const struct DvsEnsemble *handle,
                                         const int16_t *samples,
                                         size_t channels,
                                         size_t len,
                                         uint8_t *decisions,
                                         size_t capacity,
                                         size_t *frames);

// Number of whole frames of `frame_size` samples at overlap factor
// `overlap` in a stream of `len` samples.
//
// # Safety
// `out` must be writable.
enum DvsStatus dvs_frame_count(size_t len, size_t frame_size, size_t overlap, size_t *out);

// Fuses three member score vectors (`scores[3 * 7]`, member-major) into
// `out[7]`.
//
// # Safety
// `scores` must hold 21 doubles and `out` room for 7.
enum DvsStatus dvs_fuse(const double *scores, enum DvsFusionRule rule, double *out);

// Two-of-three agreement on class decisions; background on disagreement.
size_t dvs_vote(size_t c1, size_t c2, size_t c3);

// Lowest-index argmax of `probs[7]`, or 0 when below its threshold.
//
// # Safety
// `probs` and `thresholds` must hold 7 doubles; `out` writable.
enum DvsStatus dvs_threshold_decide(const double *probs, const double *thresholds, size_t *out);

// Precision and F1 (percent) from a row-normalized 7x7 recall matrix in
// percent, assuming balanced classes. Undefined entries are written as NaN.
//
// # Safety
// `row_percent` must hold 49 doubles; `precision` and `f1` room for 7.
enum DvsStatus dvs_precision_f1(const double *row_percent, double *precision, double *f1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DVS_H */
