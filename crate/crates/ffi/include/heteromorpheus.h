#ifndef HETEROMORPHEUS_H
#define HETEROMORPHEUS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every `hm_*` call.
typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_POINTER = 1,
  HM_STATUS_INVALID_UTF8 = 2,
  HM_STATUS_PARSE = 3,
  HM_STATUS_INVALID_ARGUMENT = 4,
  HM_STATUS_BUFFER_SIZE = 5,
  HM_STATUS_IO = 6,
  HM_STATUS_RUNTIME = 7,
  HM_STATUS_PANIC = 8,
} HmStatus;

// One soft-body environment instance.
typedef struct HmEnv HmEnv;

// Controller parameters.
typedef struct HmModel HmModel;

// A validated voxel morphology.
typedef struct HmMorphology HmMorphology;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// Valid until the next `hm_*` call on the same thread.
const char *hm_last_error(void);

// Library version as a static NUL-terminated string.
const char *hm_version(void);

// Parses a `{"name": ..., "grid": [[...]]}` document.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum HmStatus hm_morphology_parse(const char *json, struct HmMorphology **out);

// Number of non-empty voxels, which is also the action length.
//
// # Safety
// `morphology` must come from [`hm_morphology_parse`].
enum HmStatus hm_morphology_node_count(const struct HmMorphology *morphology, size_t *out);

// # Safety
// `morphology` must come from [`hm_morphology_parse`] or be null.
void hm_morphology_free(struct HmMorphology *morphology);

// Fresh parameters. `config_json` holds model options or is null for defaults.
//
// # Safety
// `config_json` is null or NUL-terminated; `out` must be writable.
enum HmStatus hm_model_init(const char *config_json, uint64_t seed, struct HmModel **out);

// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum HmStatus hm_model_load(const char *path, struct HmModel **out);

// # Safety
// `model` must be a live handle; `path` must be NUL-terminated.
enum HmStatus hm_model_save(const struct HmModel *model, const char *path);

// Policy mean and value for one observation. `local` is row-major
// `node_count × 16`, `global` has 3 entries and `mean_out` holds
// `node_count` values. `value_out` may be null.
//
// # Safety
// Buffers must hold at least the stated number of elements.
enum HmStatus hm_model_act(const struct HmModel *model,
                           const struct HmMorphology *morphology,
                           const double *local,
                           size_t local_len,
                           const double *global,
                           size_t global_len,
                           double *mean_out,
                           size_t mean_len,
                           double *value_out);

// # Safety
// `model` must come from this library or be null.
void hm_model_free(struct HmModel *model);

// New environment for `morphology`. `config_json` holds environment options
// or is null for defaults.
//
// # Safety
// `morphology` must be live; `out` must be writable.
enum HmStatus hm_env_new(const struct HmMorphology *morphology,
                         const char *config_json,
                         uint64_t seed,
                         struct HmEnv **out);

// # Safety
// `env` must be live.
enum HmStatus hm_env_reset(struct HmEnv *env, uint64_t seed);

// Copies the current observation: `node_count × 16` local values and 3
// global values.
//
// # Safety
// Buffers must hold the stated number of elements.
enum HmStatus hm_env_observation(const struct HmEnv *env,
                                 double *local_out,
                                 size_t local_len,
                                 double *global_out,
                                 size_t global_len);

// Advances one control step. `done_out` receives 1 when the episode ended.
//
// # Safety
// `action` must hold `action_len` values; outputs must be writable.
enum HmStatus hm_env_step(struct HmEnv *env,
                          const double *action,
                          size_t action_len,
                          double *reward_out,
                          int32_t *done_out);

// # Safety
// `env` must come from this library or be null.
void hm_env_free(struct HmEnv *env);

// Stable rank of a row-major `rows × cols` matrix.
//
// # Safety
// `data` must hold `rows * cols` values; `out` must be writable.
enum HmStatus hm_stable_rank(const double *data, size_t rows, size_t cols, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETEROMORPHEUS_H */
