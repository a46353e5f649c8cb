#ifndef DISLAB_H
#define DISLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DislabStatus {
  DISLAB_STATUS_OK = 0,
  DISLAB_STATUS_NULL_POINTER = 1,
  DISLAB_STATUS_INVALID_ARGUMENT = 2,
  DISLAB_STATUS_CONFIG = 3,
  DISLAB_STATUS_DATA = 4,
  DISLAB_STATUS_IO = 5,
  DISLAB_STATUS_NON_FINITE = 6,
  DISLAB_STATUS_USAGE = 7,
  DISLAB_STATUS_PANIC = 8,
} DislabStatus;

typedef enum DislabSplit {
  DISLAB_SPLIT_TRAIN = 0,
  DISLAB_SPLIT_TEST = 1,
} DislabSplit;

/*
 Opaque dataset handle.
 */
typedef struct DislabDataset DislabDataset;

/*
 Opaque model handle.
 */
typedef struct DislabModel DislabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or NULL. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *dislab_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *dislab_version(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and must not be used afterwards.
 */
void dislab_string_free(char *s);

/*
 Generates the synthetic benchmark. `config_toml` holds generator keys
 (see the README) and may be NULL for defaults.

 # Safety
 `config_toml` is NULL or a NUL-terminated string; `out` is writable.
 */
enum DislabStatus dislab_dataset_generate(const char *config_toml,
                                          uint64_t seed,
                                          struct DislabDataset **out);

/*
 Loads a dataset file.

 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
enum DislabStatus dislab_dataset_load(const char *path, struct DislabDataset **out);

/*
 Writes a dataset file.

 # Safety
 `dataset` is a live handle; `path` is a NUL-terminated string.
 */
enum DislabStatus dislab_dataset_save(const struct DislabDataset *dataset, const char *path);

/*
 Number of instances in a split.

 # Safety
 `dataset` is a live handle; `out` is writable.
 */
enum DislabStatus dislab_dataset_len(const struct DislabDataset *dataset,
                                     enum DislabSplit split,
                                     uintptr_t *out);

/*
 Answer vocabulary size and image feature width.

 # Safety
 `dataset` is a live handle; both outputs are writable.
 */
enum DislabStatus dislab_dataset_shape(const struct DislabDataset *dataset,
                                       uintptr_t *num_answers,
                                       uintptr_t *feature_dim);

/*
 Releases a dataset. NULL is ignored.

 # Safety
 `dataset` comes from this library and is not used afterwards.
 */
void dislab_dataset_free(struct DislabDataset *dataset);

/*
 Trains a new model on `dataset`. `config_toml` is an experiment file whose
 `[model]` and `[train]` tables are used (its `[data]` table is ignored);
 NULL selects the defaults. The run record is returned as JSON through
 `record_json` when that pointer is not NULL.

 # Safety
 `dataset` is a live handle; `config_toml` is NULL or NUL-terminated;
 `out` is writable; `record_json` is NULL or writable.
 */
enum DislabStatus dislab_train(const struct DislabDataset *dataset,
                               const char *config_toml,
                               struct DislabModel **out,
                               char **record_json);

/*
 Loads a checkpoint file.

 # Safety
 `path` is NUL-terminated; `out` is writable.
 */
enum DislabStatus dislab_model_load(const char *path, struct DislabModel **out);

/*
 Writes a checkpoint file.

 # Safety
 `model` is a live handle; `path` is NUL-terminated.
 */
enum DislabStatus dislab_model_save(const struct DislabModel *model, const char *path);

/*
 Releases a model. NULL is ignored.

 # Safety
 `model` comes from this library and is not used afterwards.
 */
void dislab_model_free(struct DislabModel *model);

/*
 Overall accuracy, in percent, of `model` on a split.

 # Safety
 Handles are live; `accuracy` is writable.
 */
enum DislabStatus dislab_evaluate(const struct DislabModel *model,
                                  const struct DislabDataset *dataset,
                                  enum DislabSplit split,
                                  double *accuracy);

/*
 Answer probabilities for one image-question pair, written to `probs`
 (`num_answers` values, which must equal the model's answer count).

 # Safety
 Arrays hold at least the stated number of elements.
 */
enum DislabStatus dislab_predict(const struct DislabModel *model,
                                 const double *features,
                                 uintptr_t num_features,
                                 const uintptr_t *tokens,
                                 uintptr_t num_tokens,
                                 double *probs,
                                 uintptr_t num_answers);

/*
 Binary cross-entropy of `rows × cols` probabilities against targets,
 summed over columns and averaged over rows.

 # Safety
 Both arrays hold `rows * cols` values; `out` is writable.
 */
enum DislabStatus dislab_vqa_loss(const double *probs,
                                  const double *targets,
                                  uintptr_t rows,
                                  uintptr_t cols,
                                  double *out);

/*
 `-log σ(p_i[m] - p_j[m])`.

 # Safety
 Both arrays hold `len` values; `out` is writable.
 */
enum DislabStatus dislab_dis_loss_simplified(const double *p_i,
                                             const double *p_j,
                                             uintptr_t len,
                                             uintptr_t m,
                                             double *out);

/*
 `-p_j[m] · log σ(p_i[m] - p_j[m])`.

 # Safety
 Both arrays hold `len` values; `out` is writable.
 */
enum DislabStatus dislab_dis_loss_modulated(const double *p_i,
                                            const double *p_j,
                                            uintptr_t len,
                                            uintptr_t m,
                                            double *out);

/*
 `-[log σ(p_i[m] - p_j[m]) + log σ(p_j[n] - p_i[n])]`.

 # Safety
 Both arrays hold `len` values; `out` is writable.
 */
enum DislabStatus dislab_dis_loss_symmetric(const double *p_i,
                                            const double *p_j,
                                            uintptr_t len,
                                            uintptr_t m,
                                            uintptr_t n,
                                            double *out);

/*
 Jensen-Shannon divergence in bits between two distributions of length `len`.

 # Safety
 Both arrays hold `len` values; `out` is writable.
 */
enum DislabStatus dislab_js_divergence(const double *p,
                                       const double *q,
                                       uintptr_t len,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISLAB_H */
