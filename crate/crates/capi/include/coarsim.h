#ifndef COARSIM_H
#define COARSIM_H

/* Generated by cbindgen from coarsim-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible API call.
typedef enum CoarsimStatus {
  CoarsimOk = 0,
  // A required pointer argument was null.
  CoarsimNullArgument = 1,
  // A string argument was not valid UTF-8.
  CoarsimInvalidUtf8 = 2,
  // Config parse/validation or mesh loading failed.
  CoarsimConfigError = 3,
  // The solver failed (non-convergence, infeasible state, breakdown).
  CoarsimSolverError = 4,
  // An output buffer was too small.
  CoarsimBufferTooSmall = 5,
} CoarsimStatus;

// Opaque simulation handle.
typedef struct CoarsimSim CoarsimSim;

// Statistics of the most recently completed step.
typedef struct CoarsimStepStats {
  uint64_t newton_iters;
  // Coarse-system PCG iterations summed over the step.
  uint64_t pcg_iters;
  // Post-coarsening iterations summed over the step.
  uint64_t post_iters;
  // Mean active ratio (coarse DoF / fine DoF) over the step's iterations.
  double active_ratio_mean;
  // Incremental potential at the start of the step's last iteration.
  double energy;
} CoarsimStepStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create a simulation from a scene config file (TOML). On success writes the
// new handle to `out` and returns `CoarsimOk`. On failure the reason is
// available via `coarsim_last_error(NULL, ...)`.
//
// # Safety
// `config_path` must be a valid NUL-terminated string; `out` must be a valid
// pointer to writable memory.
enum CoarsimStatus coarsim_sim_create(const char *config_path, struct CoarsimSim **out);

// Destroy a handle created by `coarsim_sim_create`. Null is a no-op.
//
// # Safety
// `sim` must be null or a pointer previously returned by
// `coarsim_sim_create` that has not been destroyed.
void coarsim_sim_destroy(struct CoarsimSim *sim);

// Advance the simulation by one time step.
//
// # Safety
// `sim` must be a live handle.
enum CoarsimStatus coarsim_sim_step(struct CoarsimSim *sim);

// Number of simulated vertices; 0 for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
size_t coarsim_sim_vertex_count(const struct CoarsimSim *sim);

// Current simulation time in seconds; NaN for a null handle.
//
// # Safety
// `sim` must be null or a live handle.
double coarsim_sim_time(const struct CoarsimSim *sim);

// Frame count configured in the scene file.
//
// # Safety
// `sim` must be null or a live handle.
uint64_t coarsim_sim_configured_frames(const struct CoarsimSim *sim);

// Copy current vertex positions into `out` as x0 y0 z0 x1 y1 z1 ...
// `len` is the capacity of `out` in doubles (at least 3 * vertex count).
//
// # Safety
// `sim` must be a live handle and `out` must point to at least `len`
// writable doubles.
enum CoarsimStatus coarsim_sim_positions(const struct CoarsimSim *sim, double *out, size_t len);

// Copy current vertex velocities into `out`; layout as in
// `coarsim_sim_positions`.
//
// # Safety
// As for `coarsim_sim_positions`.
enum CoarsimStatus coarsim_sim_velocities(const struct CoarsimSim *sim, double *out, size_t len);

// Statistics of the most recent completed step. Fails with
// `CoarsimSolverError` if no step has completed yet.
//
// # Safety
// `sim` must be a live handle; `out` must be valid for writes.
enum CoarsimStatus coarsim_sim_last_stats(const struct CoarsimSim *sim,
                                          struct CoarsimStepStats *out);

// Copy the last error message (for `sim`, or the thread's last creation
// error when `sim` is null) into `buf` as a NUL-terminated string. Returns
// the full message length in bytes (excluding the NUL); 0 means no error is
// stored. Pass `cap = 0` to query the required capacity.
//
// # Safety
// `buf` must point to at least `cap` writable bytes when `cap > 0`.
size_t coarsim_last_error(const struct CoarsimSim *sim, char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *coarsim_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COARSIM_H */
