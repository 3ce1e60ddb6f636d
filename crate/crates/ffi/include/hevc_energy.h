#ifndef HEVC_ENERGY_H
#define HEVC_ENERGY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every exported function.
 */
typedef enum HeStatus {
  HE_STATUS_OK = 0,
  HE_STATUS_NULL_POINTER = 1,
  HE_STATUS_INVALID_ARGUMENT = 2,
  HE_STATUS_DATA_ERROR = 3,
  HE_STATUS_NUMERICAL_FAILURE = 4,
  HE_STATUS_PANIC = 5,
} HeStatus;

/*
 Loaded dataset.
 */
typedef struct HeDataset HeDataset;

/*
 Trained model.
 */
typedef struct HeModel HeModel;

/*
 Cross-validation result.
 */
typedef struct HeReport HeReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the calling thread's last error message into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length excluding the NUL,
 or 0 when there is no error.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t he_last_error(char *buf, size_t len);

/*
 Library version, a static NUL-terminated string.
 */
const char *he_version(void);

/*
 Feature-catalog version that datasets and models must carry.
 */
const char *he_catalog_version(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a pointer obtained from this library, freed once.
 */
void he_string_free(char *s);

/*
 Writes the feature catalog as JSON.

 # Safety
 `out` must be a valid pointer.
 */
enum HeStatus he_catalog_json(char **out);

/*
 Loads a dataset from its canonical JSON bytes.

 # Safety
 `bytes` must point to `len` readable bytes; `out` must be valid.
 */
enum HeStatus he_dataset_load(const uint8_t *bytes, size_t len, struct HeDataset **out);

/*
 Generates the synthetic reference dataset for `variant` ("SM" or "EM").

 # Safety
 `variant` must be a NUL-terminated string; `out` must be valid.
 */
enum HeStatus he_dataset_synth(const char *variant,
                               double noise_rel,
                               uint64_t seed,
                               struct HeDataset **out);

/*
 Number of records in a dataset.

 # Safety
 `ds` must be a live handle; `out` must be valid.
 */
enum HeStatus he_dataset_len(const struct HeDataset *ds, size_t *out);

/*
 Serializes a dataset to its canonical JSON form.

 # Safety
 `ds` must be a live handle; `out` must be valid.
 */
enum HeStatus he_dataset_to_json(const struct HeDataset *ds, char **out);

/*
 # Safety
 `ds` must be null or a live handle, freed once.
 */
void he_dataset_free(struct HeDataset *ds);

/*
 Trains a model. `kind` is one of qp, t, uf, em, sm; `scope` is a preset
 name or null for all presets.

 # Safety
 Pointers must be valid; `scope` may be null.
 */
enum HeStatus he_fit(const struct HeDataset *ds,
                     const char *kind,
                     const char *scope,
                     int unbounded,
                     struct HeModel **out);

/*
 Loads a model from the JSON written by [`he_model_to_json`].

 # Safety
 `json` must be a NUL-terminated string; `out` must be valid.
 */
enum HeStatus he_model_from_json(const char *json, struct HeModel **out);

/*
 # Safety
 `model` must be a live handle; `out` must be valid.
 */
enum HeStatus he_model_to_json(const struct HeModel *model, char **out);

/*
 Predicts the energy of every dataset record, in dataset order, into
 `out[0..len]`. `len` must equal the dataset length.

 # Safety
 Handles must be live; `out` must point to `len` writable doubles.
 */
enum HeStatus he_model_predict(const struct HeModel *model,
                               const struct HeDataset *ds,
                               double *out,
                               size_t len);

/*
 # Safety
 `model` must be null or a live handle, freed once.
 */
void he_model_free(struct HeModel *model);

/*
 k-fold cross-validation, per preset and over all presets.

 # Safety
 Pointers must be valid.
 */
enum HeStatus he_crossval(const struct HeDataset *ds,
                          const char *kind,
                          uint32_t k,
                          uint64_t seed,
                          int unbounded,
                          struct HeReport **out);

/*
 Mean absolute relative error of a report. `preset` selects a preset row;
 "average" gives the mean over presets and null or "all" the pooled value.

 # Safety
 `report` must be live; `preset` may be null; `out` must be valid.
 */
enum HeStatus he_report_error(const struct HeReport *report, const char *preset, double *out);

/*
 Renders reports as "text", "delimited" or "plot-data".

 # Safety
 `reports` must point to `n` live handles; `format` must be a NUL-terminated
 string; `out` must be valid.
 */
enum HeStatus he_report_render(const struct HeReport *const *reports,
                               size_t n,
                               const char *format,
                               char **out);

/*
 # Safety
 `report` must be live; `out` must be valid.
 */
enum HeStatus he_report_to_json(const struct HeReport *report, char **out);

/*
 # Safety
 `report` must be null or a live handle, freed once.
 */
void he_report_free(struct HeReport *report);

/*
 One-sided Student-t critical value for confidence `alpha` and `df` degrees of freedom.

 # Safety
 `out` must be valid.
 */
enum HeStatus he_t_critical(double alpha, uint32_t df, double *out);

/*
 Stopping-rule check on `n` repeated energy measurements.

 # Safety
 `values` must point to `n` doubles; out-pointers must be valid.
 */
enum HeStatus he_confidence_check(const double *values,
                                  size_t n,
                                  double alpha,
                                  double beta,
                                  int *satisfied,
                                  double *lhs,
                                  double *rhs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEVC_ENERGY_H */
