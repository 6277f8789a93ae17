#ifndef MAPSAM2_H
#define MAPSAM2_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Library error categories share the CLI exit codes.
 */
typedef enum Mapsam2Status {
  MAPSAM2_STATUS_OK = 0,
  MAPSAM2_STATUS_INVALID_ARGUMENT = 2,
  MAPSAM2_STATUS_NOT_FOUND = 3,
  MAPSAM2_STATUS_MALFORMED_IMAGE = 4,
  MAPSAM2_STATUS_SCHEMA = 5,
  MAPSAM2_STATUS_CHECKPOINT = 6,
  MAPSAM2_STATUS_LAYOUT_INFEASIBLE = 7,
  MAPSAM2_STATUS_EMPTY_INPUT = 8,
  MAPSAM2_STATUS_NULL_POINTER = 9,
  MAPSAM2_STATUS_BUFFER_TOO_SMALL = 10,
  MAPSAM2_STATUS_PANIC = 11,
} Mapsam2Status;

typedef enum Mapsam2Policy {
  MAPSAM2_POLICY_SELF_SORTING = 0,
  MAPSAM2_POLICY_FIFO = 1,
} Mapsam2Policy;

typedef enum Mapsam2UpdateKind {
  MAPSAM2_UPDATE_KIND_REJECTED = 0,
  MAPSAM2_UPDATE_KIND_APPENDED = 1,
  MAPSAM2_UPDATE_KIND_EVICTED = 2,
  MAPSAM2_UPDATE_KIND_DISCARDED = 3,
} Mapsam2UpdateKind;

/**
 * Opaque memory bank over plain embedding vectors.
 */
typedef struct Mapsam2Bank Mapsam2Bank;

/**
 * Opaque trained model.
 */
typedef struct Mapsam2Model Mapsam2Model;

/**
 * Box prompt `[x0, x1) x [y0, y1)` for object `id`.
 */
typedef struct Mapsam2Box {
  uint32_t id;
  uint32_t x0;
  uint32_t y0;
  uint32_t x1;
  uint32_t y1;
} Mapsam2Box;

typedef struct Mapsam2Scores {
  double precision;
  double recall;
  double f1;
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
} Mapsam2Scores;

/**
 * Outcome of a bank update. `evicted_tick` is meaningful for `Evicted` only.
 */
typedef struct Mapsam2Update {
  enum Mapsam2UpdateKind kind;
  uint64_t evicted_tick;
} Mapsam2Update;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mapsam2_version(void);

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mapsam2_last_error(void);

/**
 * Load a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum Mapsam2Status mapsam2_model_load(const char *path, struct Mapsam2Model **out);

/**
 * Side length frames must have; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mapsam2_model_input_size(const struct Mapsam2Model *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void mapsam2_model_free(struct Mapsam2Model *model);

/**
 * Segment and track prompted objects through a video.
 *
 * `frames` holds `n_frames` row-major 8-bit frames of side
 * `mapsam2_model_input_size`, latest first; the boxes refer to the first one.
 * `out_labels` receives one 16-bit label map per frame, labels being object
 * ids; where objects overlap the smaller id wins.
 *
 * # Safety
 * Pointers must reference buffers of the stated sizes.
 */
enum Mapsam2Status mapsam2_segment_video(const struct Mapsam2Model *model,
                                         const uint8_t *frames,
                                         size_t n_frames,
                                         const struct Mapsam2Box *boxes,
                                         size_t n_boxes,
                                         bool use_memory,
                                         uint16_t *out_labels);

/**
 * Instance-level precision, recall and F1 of predicted label maps against
 * ground truth, labels being track ids consistent across frames.
 *
 * # Safety
 * Both label buffers must hold `n_frames * height * width` values.
 */
enum Mapsam2Status mapsam2_eval_video(const uint16_t *pred,
                                      const uint16_t *gt,
                                      size_t n_frames,
                                      size_t height,
                                      size_t width,
                                      struct Mapsam2Scores *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum Mapsam2Status mapsam2_bank_new(size_t capacity,
                                    enum Mapsam2Policy policy,
                                    struct Mapsam2Bank **out);

/**
 * # Safety
 * `bank` must be null or a handle not yet freed.
 */
void mapsam2_bank_free(struct Mapsam2Bank *bank);

/**
 * Offer an embedding to the bank. The FIFO policy ignores the threshold.
 *
 * # Safety
 * `bank` must be live, `vector` must hold `dim` values, `out` may be null.
 */
enum Mapsam2Status mapsam2_bank_update(struct Mapsam2Bank *bank,
                                       const double *vector,
                                       size_t dim,
                                       double confidence,
                                       double conf_threshold,
                                       struct Mapsam2Update *out);

/**
 * Number of stored entries; 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or live.
 */
size_t mapsam2_bank_len(const struct Mapsam2Bank *bank);

/**
 * Insertion ticks of the stored entries, oldest first.
 *
 * # Safety
 * `out` must hold `cap` values.
 */
enum Mapsam2Status mapsam2_bank_ticks(const struct Mapsam2Bank *bank, uint64_t *out, size_t cap);

/**
 * Retrieval probability of each stored entry for `query`.
 *
 * # Safety
 * `query` must hold `dim` values and `out` `cap` values.
 */
enum Mapsam2Status mapsam2_bank_probabilities(const struct Mapsam2Bank *bank,
                                              const double *query,
                                              size_t dim,
                                              double *out,
                                              size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAPSAM2_H */
