#ifndef SWITCHDWELL_H
#define SWITCHDWELL_H

#include <stdbool.h>
#include <stddef.h>

typedef enum {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument at the C boundary: invalid UTF-8, zero length, short buffer.
   */
  SD_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The library rejected the input (model, signal, scenario).
   */
  SD_STATUS_INPUT_ERROR = 3,
  /**
   * Numerical failure such as a non-finite state.
   */
  SD_STATUS_NUMERIC_ERROR = 4,
  SD_STATUS_IO_ERROR = 5,
  SD_STATUS_PANIC = 6,
} SdStatus;

typedef struct SdSignal SdSignal;

/**
 * Switched system under construction or in use.
 */
typedef struct SdSystem SdSystem;

typedef struct SdTrajectory SdTrajectory;

/**
 * `α(s) = c·s^p`
 */
typedef struct {
  double c;
  double p;
} SdClassK;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *sd_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *sd_last_error_message(void);

/**
 * Empty system of the given state dimension.
 *
 * # Safety
 * `out_system` must be a valid pointer.
 */
SdStatus sd_system_new(size_t dimension, SdSystem **out_system);

/**
 * The three-mode planar example: rotation-contraction fields with
 * equilibria (0, 1), (−0.5, 0.5) and (−1, 0), labelled u1, u2, u3.
 *
 * # Safety
 * `out_system` must be a valid pointer.
 */
SdStatus sd_system_example(SdSystem **out_system);

/**
 * Adds the mode `ẋ = A x + b` with `V = ‖x − x_u‖²`. `a` is row-major
 * `n × n`, `b` has `n` entries.
 *
 * # Safety
 * `system` must come from this library; `a` and `b` must hold `n·n` and `n`
 * values; `label` must be NUL-terminated.
 */
SdStatus sd_system_add_affine(SdSystem *system,
                              const char *label,
                              const double *a,
                              const double *b);

/**
 * # Safety
 * `system` must be NULL or come from this library and not be used afterwards.
 */
void sd_system_free(SdSystem *system);

/**
 * Number of modes.
 *
 * # Safety
 * `system` must come from this library.
 */
SdStatus sd_system_len(const SdSystem *system, size_t *out_len);

/**
 * Equilibrium of `label`, written to `out_x` (capacity `len`).
 *
 * # Safety
 * `out_x` must hold `len` values.
 */
SdStatus sd_system_equilibrium(const SdSystem *system,
                               const char *label,
                               double *out_x,
                               size_t len);

/**
 * Dwell time `T_{from,to}(ε)`, clamped at zero.
 *
 * # Safety
 * Pointers must be valid; labels NUL-terminated.
 */
SdStatus sd_pairwise_dwell(const SdSystem *system,
                           double eps,
                           const char *from,
                           const char *to,
                           double *out_dwell);

/**
 * Largest pairwise dwell over all ordered pairs of distinct modes.
 *
 * # Safety
 * Pointers must be valid.
 */
SdStatus sd_local_dwell(const SdSystem *system, double eps, double *out_dwell);

/**
 * `μ(ε)` from the closed form for identity-weighted quadratic certificates.
 *
 * # Safety
 * Pointers must be valid.
 */
SdStatus sd_mu_closed_form(const SdSystem *system, double eps, double *out_mu);

/**
 * `(1 + margin) · ln μ / k_min`
 *
 * # Safety
 * `out_dwell` must be valid.
 */
SdStatus sd_global_dwell(double mu, double k_min, double margin, double *out_dwell);

/**
 * `T_{u0,u1} − T_{u0,v} − T_{v,u1}` on unclamped travel times. Negative
 * means the detour through `v` is slower.
 *
 * # Safety
 * Pointers must be valid; labels NUL-terminated.
 */
SdStatus sd_triangle_gap(const SdSystem *system,
                         double eps,
                         const char *u0,
                         const char *v,
                         const char *u1,
                         double *out_gap);

/**
 * Threshold below which every `(d, r)` configuration has a slower detour.
 *
 * # Safety
 * `out_eps0` must be valid.
 */
SdStatus sd_epsilon0_search(double d,
                            double r,
                            SdClassK alpha,
                            SdClassK beta,
                            double k,
                            double *out_eps0);

/**
 * Signal starting in `initial_mode` at `t0` and visiting `modes[0..n_modes]`
 * in order. `dwell` holds one value (uniform) or `n_modes` values.
 *
 * # Safety
 * `modes` must hold `n_modes` NUL-terminated strings and `dwell` `n_dwell`
 * values.
 */
SdStatus sd_signal_from_dwell(const char *initial_mode,
                              const char *const *modes,
                              size_t n_modes,
                              const double *dwell,
                              size_t n_dwell,
                              double t0,
                              bool periodic,
                              SdSignal **out_signal);

/**
 * # Safety
 * `signal` must be NULL or come from this library and not be used afterwards.
 */
void sd_signal_free(SdSignal *signal);

/**
 * Mode active at `t`, written NUL-terminated to `buf`. `out_needed`, when
 * not NULL, receives the required size including the terminator.
 *
 * # Safety
 * `buf` must hold `len` bytes.
 */
SdStatus sd_signal_mode_at(const SdSignal *signal,
                           double t,
                           char *buf,
                           size_t len,
                           size_t *out_needed);

/**
 * RK4 simulation from `x0` (length `n`) over `[t0, t_end]`.
 *
 * # Safety
 * `x0` must hold `n` values; handles must come from this library.
 */
SdStatus sd_simulate(const SdSystem *system,
                     const SdSignal *signal,
                     const double *x0,
                     size_t n,
                     double t_end,
                     double step,
                     SdTrajectory **out_trajectory);

/**
 * # Safety
 * `trajectory` must be NULL or come from this library and not be used
 * afterwards.
 */
void sd_trajectory_free(SdTrajectory *trajectory);

/**
 * Number of samples and number of switch events.
 *
 * # Safety
 * Pointers must be valid; either output may be NULL.
 */
SdStatus sd_trajectory_counts(const SdTrajectory *trajectory,
                              size_t *out_samples,
                              size_t *out_switches);

/**
 * Sample `index`: time into `out_t`, state into `out_x` (capacity `len`).
 *
 * # Safety
 * `out_x` must hold `len` values.
 */
SdStatus sd_trajectory_sample(const SdTrajectory *trajectory,
                              size_t index,
                              double *out_t,
                              double *out_x,
                              size_t len);

/**
 * State at switch `index` (counting from 0) and its time.
 *
 * # Safety
 * `out_x` must hold `len` values.
 */
SdStatus sd_trajectory_switch(const SdTrajectory *trajectory,
                              size_t index,
                              double *out_t,
                              double *out_x,
                              size_t len);

/**
 * Checks `x(t_i) ∈ N^ε_{u_i}` at every switch. `out_pass` is 1 when all
 * switch states are members, else 0. `out_max_value`, when not NULL,
 * receives the largest `V_{u_i}(x(t_i))`.
 *
 * # Safety
 * Handles must come from this library.
 */
SdStatus sd_verify_trapping(const SdTrajectory *trajectory,
                            const SdSystem *system,
                            const SdSignal *signal,
                            double eps,
                            int *out_pass,
                            double *out_max_value);

/**
 * Runs a scenario file (or `builtin:<name>`) and writes its outputs under
 * `out_dir`. `out_exit_code` receives 0 when every check passed and 2 when
 * a verification failed.
 *
 * # Safety
 * Strings must be NUL-terminated.
 */
SdStatus sd_scenario_run(const char *scenario, const char *out_dir, int *out_exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWITCHDWELL_H */
