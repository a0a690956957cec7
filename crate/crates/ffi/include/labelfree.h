#ifndef LABELFREE_H
#define LABELFREE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_POINTER = 1,
  LF_STATUS_INVALID_ARGUMENT = 2,
  LF_STATUS_DOMAIN = 3,
  LF_STATUS_CONFIG = 4,
  LF_STATUS_FORMAT = 5,
  LF_STATUS_IO = 6,
  LF_STATUS_ROLLOUT = 7,
  LF_STATUS_TRAINING = 8,
  LF_STATUS_NOT_APPLICABLE = 9,
  LF_STATUS_NOT_READY = 10,
  LF_STATUS_PANIC = 11,
} LfStatus;

/**
 * Opaque trained agent plus the history of the episode it is playing.
 */
typedef struct LfAgent LfAgent;

/**
 * Opaque two-hot bin layout.
 */
typedef struct LfBins LfBins;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lf_last_error_message(void);

/**
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum LfStatus lf_symlog(double y, double *out);

/**
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum LfStatus lf_symexp(double b, double *out);

/**
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle to free
 * with [`lf_bins_free`].
 */
enum LfStatus lf_bins_new(size_t num_bins,
                          double low,
                          double high,
                          bool use_symlog,
                          struct LfBins **out);

/**
 * # Safety
 * `bins` must come from [`lf_bins_new`] and not be used afterwards. Null is ignored.
 */
void lf_bins_free(struct LfBins *bins);

/**
 * # Safety
 * `bins` must be a live handle.
 */
size_t lf_bins_count(const struct LfBins *bins);

/**
 * Writes the two-hot encoding of `y` into `probs[0..len]`; `len` must equal the bin count.
 *
 * # Safety
 * `bins` must be a live handle and `probs` must point to `len` writable doubles.
 */
enum LfStatus lf_bins_encode(const struct LfBins *bins, double y, double *probs, size_t len);

/**
 * Expected value of a bin distribution.
 *
 * # Safety
 * `bins` must be a live handle, `probs` must point to `len` doubles and
 * `out` to one writable double.
 */
enum LfStatus lf_bins_decode(const struct LfBins *bins,
                             const double *probs,
                             size_t len,
                             double *out);

/**
 * Loads a checkpoint file. `seed` drives action sampling.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer; on
 * success it receives a handle to free with [`lf_agent_free`].
 */
enum LfStatus lf_agent_load(const char *path, uint64_t seed, struct LfAgent **out);

/**
 * # Safety
 * `agent` must come from [`lf_agent_load`] and not be used afterwards. Null is ignored.
 */
void lf_agent_free(struct LfAgent *agent);

/**
 * # Safety
 * `agent` must be a live handle.
 */
size_t lf_agent_obs_dim(const struct LfAgent *agent);

/**
 * # Safety
 * `agent` must be a live handle.
 */
size_t lf_agent_action_count(const struct LfAgent *agent);

/**
 * Forgets the history; call before a new meta-rollout.
 *
 * # Safety
 * `agent` must be a live handle.
 */
enum LfStatus lf_agent_reset(struct LfAgent *agent);

/**
 * Appends one timestep and picks the next action.
 *
 * `prev_action` is negative on the first step of a meta-rollout.
 *
 * # Safety
 * `agent` must be a live handle, `obs` must point to `obs_len` doubles and
 * `action` to one writable `uint32_t`.
 */
enum LfStatus lf_agent_step(struct LfAgent *agent,
                            const double *obs,
                            size_t obs_len,
                            int32_t prev_action,
                            double prev_reward,
                            bool prev_done,
                            bool greedy,
                            uint32_t *action);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LABELFREE_H */
