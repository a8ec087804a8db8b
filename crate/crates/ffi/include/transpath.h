#ifndef TRANSPATH_H
#define TRANSPATH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpStatus {
  TP_STATUS_OK = 0,
  TP_STATUS_NULL_POINTER = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  TP_STATUS_IO = 3,
  TP_STATUS_CHECKPOINT_MISMATCH = 4,
  TP_STATUS_NON_FINITE = 5,
  TP_STATUS_BUFFER_TOO_SMALL = 6,
  TP_STATUS_INTERNAL = 7,
} TpStatus;

// A trained policy plus the environment it acts in.
typedef struct TpPolicy TpPolicy;

// Integration settings mirrored from the core defaults.
typedef struct TpSimParams {
  double dt;
  double beta;
  uint64_t n_steps;
  uint64_t seed;
} TpSimParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `capacity` bytes. Returns the full message length without
// the terminator, so a caller can size its buffer.
//
// # Safety
// `buf` is null or points to `capacity` writable bytes.
size_t tp_last_error_message(char *buf, size_t capacity);

// NUL-terminated crate version; static storage.
const char *tp_version(void);

struct TpSimParams tp_sim_params_default(void);

// Default three-well potential at `(x, y)`.
//
// # Safety
// `out` is null or valid for one write.
enum TpStatus tp_potential(double x, double y, double *out);

// Gradient of the default potential.
//
// # Safety
// `gx` and `gy` are null or valid for one write each.
enum TpStatus tp_gradient(double x, double y, double *gx, double *gy);

// Unbiased path of `params->n_steps` steps from `(x0, y0)` on stream
// `stream_id` of `params->seed`. Writes `x0, y0, x1, y1, ...` into `out`,
// which must hold `2 * (n_steps + 1)` doubles; `written` receives the count.
//
// # Safety
// `params` and `written` are null or valid; `out` is null or points to
// `capacity` writable doubles.
enum TpStatus tp_simulate(double x0,
                          double y0,
                          const struct TpSimParams *params,
                          uint64_t stream_id,
                          double *out,
                          size_t capacity,
                          size_t *written);

// Step reward of the default environment for a move from `q` to `q_next`
// under force `a` (clamped to the action box first).
//
// # Safety
// `out` is null or valid for one write.
enum TpStatus tp_reward(double qx,
                        double qy,
                        double nx,
                        double ny,
                        double ax,
                        double ay,
                        double *out);

// Loads the policy of a TD3 checkpoint directory. The handle is released
// with [`tp_policy_free`].
//
// # Safety
// `path` is null or a NUL-terminated string; `out` is null or valid.
enum TpStatus tp_policy_load(const char *path, struct TpPolicy **out);

// Releases a policy handle; null is ignored.
//
// # Safety
// `policy` is null or came from [`tp_policy_load`] and is not used again.
void tp_policy_free(struct TpPolicy *policy);

// Deterministic force at `(x, y)`.
//
// # Safety
// `policy` is null or a live handle; `ax` and `ay` are null or valid.
enum TpStatus tp_policy_action(const struct TpPolicy *policy,
                               double x,
                               double y,
                               double *ax,
                               double *ay);

// Number of doubles a rollout writes: `2 * (episode_length + 1)`.
//
// # Safety
// `policy` is null or a live handle.
size_t tp_policy_rollout_len(const struct TpPolicy *policy);

// One policy-driven episode from the environment start on stream
// `stream_id` of `seed`. Writes the path as in [`tp_simulate`]; `success`
// is set to 1 if the path crossed into the transition half-plane.
//
// # Safety
// `policy` is null or live; `out` is null or points to `capacity` doubles;
// `written` and `success` are null or valid.
enum TpStatus tp_policy_rollout(const struct TpPolicy *policy,
                                uint64_t seed,
                                uint64_t stream_id,
                                double *out,
                                size_t capacity,
                                size_t *written,
                                int32_t *success);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSPATH_H */
