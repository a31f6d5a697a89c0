#ifndef SUSD_H
#define SUSD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SusdStatus {
  SUSD_STATUS_OK = 0,
  SUSD_STATUS_NULL_POINTER = 1,
  SUSD_STATUS_CONFIG = 2,
  SUSD_STATUS_DIVERGENCE = 3,
  SUSD_STATUS_DIMENSION = 4,
  SUSD_STATUS_UNSUPPORTED = 5,
  SUSD_STATUS_IO = 6,
  SUSD_STATUS_INVALID_UTF8 = 7,
  SUSD_STATUS_PANIC = 8,
  SUSD_STATUS_OTHER = 9,
} SusdStatus;

/**
 * An environment instance.
 */
typedef struct SusdEnv SusdEnv;

/**
 * A trained skill-conditioned policy.
 */
typedef struct SusdPolicy SusdPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a
 * success. Valid until the next call on this thread.
 */
const char *susd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *susd_version(void);

/**
 * Creates an environment by id (`gunner`, `multiparticle`,
 * `multiparticle-mini`, `pointnav`).
 *
 * # Safety
 * `id` must be a NUL-terminated string; `out` must be writable.
 */
enum SusdStatus susd_env_new(const char *id, struct SusdEnv **out);

/**
 * # Safety
 * `env` must come from [`susd_env_new`] and not be used afterwards.
 */
void susd_env_free(struct SusdEnv *env);

/**
 * Observation and action widths and factor count.
 *
 * # Safety
 * `env` must be a live handle; the out pointers must be writable.
 */
enum SusdStatus susd_env_dims(const struct SusdEnv *env,
                              size_t *obs_dim,
                              size_t *action_dim,
                              size_t *factors);

/**
 * Resets with `seed` and writes the first observation.
 *
 * # Safety
 * `env` must be a live handle; `obs` must hold `obs_len` doubles.
 */
enum SusdStatus susd_env_reset(struct SusdEnv *env, uint64_t seed, double *obs, size_t obs_len);

/**
 * Advances one step. `done` is set to 1 at episode end.
 *
 * # Safety
 * `env` must be a live handle; buffers must hold the stated lengths.
 */
enum SusdStatus susd_env_step(struct SusdEnv *env,
                              const double *action,
                              size_t action_len,
                              double *obs,
                              size_t obs_len,
                              double *reward,
                              int32_t *done);

/**
 * Loads `checkpoint-final` from a pretraining run directory.
 *
 * # Safety
 * `run_dir` must be a NUL-terminated path; `out` must be writable.
 */
enum SusdStatus susd_policy_load(const char *run_dir, struct SusdPolicy **out);

/**
 * # Safety
 * `policy` must come from [`susd_policy_load`] and not be used afterwards.
 */
void susd_policy_free(struct SusdPolicy *policy);

/**
 * Observation, skill and action widths the policy expects.
 *
 * # Safety
 * `policy` must be a live handle; the out pointers must be writable.
 */
enum SusdStatus susd_policy_dims(const struct SusdPolicy *policy,
                                 size_t *obs_dim,
                                 size_t *skill_dim,
                                 size_t *action_dim);

/**
 * Draws a skill from the prior with `seed`.
 *
 * # Safety
 * `policy` must be a live handle; `skill` must hold `skill_len` doubles.
 */
enum SusdStatus susd_policy_sample_skill(const struct SusdPolicy *policy,
                                         uint64_t seed,
                                         double *skill,
                                         size_t skill_len);

/**
 * Deterministic action `tanh(mean)` for `obs` under `skill`.
 *
 * # Safety
 * `policy` must be a live handle; buffers must hold the stated lengths.
 */
enum SusdStatus susd_policy_act(const struct SusdPolicy *policy,
                                const double *obs,
                                size_t obs_len,
                                const double *skill,
                                size_t skill_len,
                                double *action,
                                size_t action_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUSD_H */
