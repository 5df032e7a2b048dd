#ifndef OLSEG_H
#define OLSEG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum OlsegStatus {
  OLSEG_STATUS_OK = 0,
  OLSEG_STATUS_NULL_ARGUMENT = 1,
  OLSEG_STATUS_CONFIG = 2,
  OLSEG_STATUS_DATA = 3,
  OLSEG_STATUS_NUMERIC = 4,
  OLSEG_STATUS_SHAPE = 5,
  OLSEG_STATUS_INVALID_ARGUMENT = 6,
  OLSEG_STATUS_IO = 7,
  OLSEG_STATUS_PANIC = 8,
} OlsegStatus;

/*
 Run configuration.
 */
typedef struct OlsegConfig OlsegConfig;

/*
 A trained network with the configuration it was loaded under.
 */
typedef struct OlsegModel OlsegModel;

/*
 Per-slice coordinate records of a preprocessed volume.
 */
typedef struct OlsegTransforms OlsegTransforms;

/*
 A volume of B-scans with intensities in [0, 1].
 */
typedef struct OlsegVolume OlsegVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Owned by the
 library and valid until the next failing call on this thread.
 */
const char *olseg_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *olseg_version(void);

/*
 Number of boundary surfaces predicted per column.
 */
size_t olseg_surface_count(void);

/*
 Default configuration.
 */
enum OlsegStatus olseg_config_new(struct OlsegConfig **out);

/*
 Loads a `key = value` configuration file.
 */
enum OlsegStatus olseg_config_load(const char *path, struct OlsegConfig **out);

/*
 Sets one configuration key from its text form.
 */
enum OlsegStatus olseg_config_set(struct OlsegConfig *cfg, const char *key, const char *value);

void olseg_config_free(struct OlsegConfig *cfg);

/*
 Copies `slices*height*width` samples (slice-major, row-major) into a new volume.
 */
enum OlsegStatus olseg_volume_new(size_t slices,
                                  size_t height,
                                  size_t width,
                                  const float *data,
                                  struct OlsegVolume **out);

enum OlsegStatus olseg_volume_read(const char *path, struct OlsegVolume **out);

enum OlsegStatus olseg_volume_write(const struct OlsegVolume *vol, const char *path);

enum OlsegStatus olseg_volume_dims(const struct OlsegVolume *vol,
                                   size_t *slices,
                                   size_t *height,
                                   size_t *width);

/*
 Copies all samples into `out`, which must hold `len ≥ slices*height*width` floats.
 */
enum OlsegStatus olseg_volume_copy_data(const struct OlsegVolume *vol, float *out, size_t len);

void olseg_volume_free(struct OlsegVolume *vol);

/*
 Preprocesses every slice of `vol` under `cfg`. Rejected slices come back
 black, with no transform record.
 */
enum OlsegStatus olseg_preprocess(const struct OlsegConfig *cfg,
                                  const struct OlsegVolume *vol,
                                  struct OlsegVolume **out_volume,
                                  struct OlsegTransforms **out_transforms);

/*
 Whether slice `slice` survived preprocessing (1) or was rejected (0).
 */
enum OlsegStatus olseg_transforms_usable(const struct OlsegTransforms *t,
                                         size_t slice,
                                         uint8_t *usable);

/*
 Original row at original column `col` → network-space row.
 */
enum OlsegStatus olseg_transform_row_to_output(const struct OlsegTransforms *t,
                                               size_t slice,
                                               size_t col,
                                               double row,
                                               double *out);

/*
 Network-space row at original column `col` → original row.
 */
enum OlsegStatus olseg_transform_row_to_original(const struct OlsegTransforms *t,
                                                 size_t slice,
                                                 size_t col,
                                                 double row,
                                                 double *out);

void olseg_transforms_free(struct OlsegTransforms *t);

/*
 Loads a checkpoint for the model described by `cfg`.
 */
enum OlsegStatus olseg_model_load(const struct OlsegConfig *cfg,
                                  const char *checkpoint,
                                  struct OlsegModel **out);

/*
 Predicts every slice of a raw volume. `out` receives
 `slices × surfaces × width` rows in original coordinates (slice-major,
 then surface, then column); rejected slices are filled with NaN.
 */
enum OlsegStatus olseg_model_predict(const struct OlsegModel *model,
                                     const struct OlsegVolume *vol,
                                     double *out,
                                     size_t len);

/*
 Mean absolute change of predicted surfaces between adjacent slices.
 */
enum OlsegStatus olseg_model_consistency(const struct OlsegModel *model,
                                         const struct OlsegVolume *vol,
                                         double *out);

void olseg_model_free(struct OlsegModel *model);

/*
 Mean absolute distance over columns with `valid[i] != 0`.
 */
enum OlsegStatus olseg_mad(const double *pred,
                           const double *gt,
                           const uint8_t *valid,
                           size_t n,
                           double *out);

/*
 Root mean squared distance over columns with `valid[i] != 0`.
 */
enum OlsegStatus olseg_rmse(const double *pred,
                            const double *gt,
                            const uint8_t *valid,
                            size_t n,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OLSEG_H */
