/* C interface for the Attention-ResUNet workbench. Generated by cbindgen; do not edit. */

#ifndef ARU_H
#define ARU_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible API call.
 */
typedef enum AruStatus {
  ARU_OK = 0,
  /**
   * Bad argument: wrong buffer size, unknown name, out-of-range value.
   */
  ARU_INVALID_ARGUMENT = 1,
  /**
   * File or dataset problem: missing path, corrupt checkpoint, bad layout.
   */
  ARU_DATA_ERROR = 2,
  /**
   * Non-finite values encountered during computation.
   */
  ARU_NUMERIC_ERROR = 3,
  /**
   * A required pointer argument was null.
   */
  ARU_NULL_POINTER = 4,
  /**
   * Internal panic caught at the boundary; state may be inconsistent.
   */
  ARU_PANIC = 5,
} AruStatus;

/**
 * Opaque dataset handle.
 */
typedef struct AruDataset AruDataset;

/**
 * Opaque network handle (single precision).
 */
typedef struct AruNet AruNet;

/**
 * Static description of a constructed network.
 */
typedef struct AruNetInfo {
  uintptr_t parameters;
  uint64_t flops_per_image;
  uintptr_t input_h;
  uintptr_t input_w;
  uintptr_t levels;
  uintptr_t attention_gates;
  bool residual;
} AruNetInfo;

/**
 * Training hyperparameters; obtain defaults from
 * [`aru_train_options_default`] and override selectively.
 */
typedef struct AruTrainOptions {
  uintptr_t epochs;
  double lr;
  uintptr_t batch;
  /**
   * Validate every N epochs (the last epoch always validates).
   */
  uintptr_t val_every;
  /**
   * Validation rounds without improvement before early stop.
   */
  uintptr_t patience;
  uint64_t seed;
  bool augment;
} AruTrainOptions;

/**
 * Aggregate segmentation quality on one dataset split.
 */
typedef struct AruMetrics {
  /**
   * Samples evaluated.
   */
  uintptr_t n;
  double mean_dice;
  double sd_dice;
  double mean_iou;
  /**
   * Pooled ROC AUC; NaN when undefined (single-class split).
   */
  double auc_roc;
} AruMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty string when no
 * failure has occurred. Valid until the next failing call on this thread.
 */
const char *aru_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aru_version(void);

/**
 * Generate a synthetic phantom dataset of `n` samples at `size`x`size`
 * (80/20 train/val split). `hard` toggles the noisy difficulty tier.
 *
 * # Safety
 * `out` must point to writable storage for one pointer.
 */
enum AruStatus aru_dataset_generate(uintptr_t n,
                                    uintptr_t size,
                                    bool hard,
                                    uint64_t seed,
                                    struct AruDataset **out);

/**
 * Load a dataset directory produced by `aru_dataset_save` or the CLI.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` as in `aru_dataset_generate`.
 */
enum AruStatus aru_dataset_load(const char *dir, struct AruDataset **out);

/**
 * Write the dataset (images, masks, manifest, metadata) into `dir`.
 *
 * # Safety
 * `ds` must be a live handle; `dir` a NUL-terminated path.
 */
enum AruStatus aru_dataset_save(const struct AruDataset *ds, const char *dir);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uintptr_t aru_dataset_len(const struct AruDataset *ds);

/**
 * Image height and width in pixels.
 *
 * # Safety
 * All pointers must be valid; `h`/`w` point to writable `size_t`.
 */
enum AruStatus aru_dataset_size(const struct AruDataset *ds, uintptr_t *h, uintptr_t *w);

/**
 * Sample id as a NUL-terminated string owned by the handle (valid while the
 * handle lives). Null for an out-of-range index.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
const char *aru_dataset_sample_id(const struct AruDataset *ds, uintptr_t index);

/**
 * Split of sample `index`: 0 train, 1 val, 2 test; -1 on bad input.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
int32_t aru_dataset_sample_split(const struct AruDataset *ds, uintptr_t index);

/**
 * Copy the image of sample `index` into `buf` (row-major, `h*w` floats).
 *
 * # Safety
 * `buf` must point to `buf_len` writable floats.
 */
enum AruStatus aru_dataset_image(const struct AruDataset *ds,
                                 uintptr_t index,
                                 float *buf,
                                 uintptr_t buf_len);

/**
 * Copy the binary mask of sample `index` into `buf` (`h*w` bytes of 0/1).
 *
 * # Safety
 * `buf` must point to `buf_len` writable bytes.
 */
enum AruStatus aru_dataset_mask(const struct AruDataset *ds,
                                uintptr_t index,
                                uint8_t *buf,
                                uintptr_t buf_len);

/**
 * Destroy a dataset handle (null is a no-op).
 *
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void aru_dataset_free(struct AruDataset *ds);

/**
 * Construct a randomly initialized network.
 *
 * `arch` is one of `unet`, `resunet`, `attunet`, `attresunet`. `channels`
 * may be null (with `n_channels` 0) for the default 64,128,256,512 encoder
 * ladder; `bottleneck` 0 means twice the last encoder width.
 *
 * # Safety
 * `channels` must point to `n_channels` values when non-null; `out` to
 * writable storage for one pointer.
 */
enum AruStatus aru_net_new(const char *arch,
                           uintptr_t input_h,
                           uintptr_t input_w,
                           const uintptr_t *channels,
                           uintptr_t n_channels,
                           uintptr_t bottleneck,
                           uint64_t seed,
                           struct AruNet **out);

/**
 * Load a checkpoint written by `aru_net_save` or the CLI trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated path; `out` as in `aru_net_new`.
 */
enum AruStatus aru_net_load(const char *path, struct AruNet **out);

/**
 * Save parameters, buffers, and architecture metadata to `path`.
 *
 * # Safety
 * `net` must be a live handle; `path` a NUL-terminated path.
 */
enum AruStatus aru_net_save(const struct AruNet *net, const char *path);

/**
 * Fill `info` with parameter/FLOP counts and topology facts.
 *
 * # Safety
 * `net` must be a live handle; `info` writable.
 */
enum AruStatus aru_net_info(const struct AruNet *net, struct AruNetInfo *info);

/**
 * Segment one image: `image` is `h*w` floats in [0,1], `probs` receives
 * `h*w` foreground probabilities.
 *
 * # Safety
 * `image` must hold `image_len` floats and `probs` `probs_len` writable
 * floats.
 */
enum AruStatus aru_net_predict(struct AruNet *net,
                               const float *image,
                               uintptr_t image_len,
                               float *probs,
                               uintptr_t probs_len);

/**
 * Defaults mirroring the published protocol: 25 epochs, lr 1e-4, batch 8,
 * validation every 5 epochs, patience 3, seed 42, augmentation on.
 */
struct AruTrainOptions aru_train_options_default(void);

/**
 * Train in place on the dataset's train split, keeping the best-validation
 * weights. Optional outputs receive the best mean validation Dice and the
 * epoch it occurred at.
 *
 * # Safety
 * `net`/`ds` must be live handles; `opts` null (defaults) or valid;
 * `best_val_dice`/`best_epoch` null or writable.
 */
enum AruStatus aru_net_train(struct AruNet *net,
                             const struct AruDataset *ds,
                             const struct AruTrainOptions *opts,
                             double *best_val_dice,
                             uintptr_t *best_epoch);

/**
 * Evaluate on one split (0 train, 1 val, 2 test) at `threshold`, writing the
 * aggregate numbers into `metrics`.
 *
 * # Safety
 * `net`/`ds` must be live handles; `metrics` writable.
 */
enum AruStatus aru_net_evaluate(struct AruNet *net,
                                const struct AruDataset *ds,
                                int32_t split,
                                double threshold,
                                uintptr_t batch,
                                struct AruMetrics *metrics);

/**
 * Destroy a network handle (null is a no-op).
 *
 * # Safety
 * `net` must be null or a handle not freed before.
 */
void aru_net_free(struct AruNet *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARU_H */
