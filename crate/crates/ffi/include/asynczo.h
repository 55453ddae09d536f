#ifndef ASYNCZO_H
#define ASYNCZO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AzoStatus {
  AZO_STATUS_OK = 0,
  AZO_STATUS_NULL_POINTER = 1,
  AZO_STATUS_INVALID_ARGUMENT = 2,
  AZO_STATUS_LAYOUT = 3,
  AZO_STATUS_EVALUATION = 4,
  AZO_STATUS_DIVERGED = 5,
  AZO_STATUS_IO = 6,
  AZO_STATUS_PANIC = 7,
} AzoStatus;

typedef enum AzoEstimator {
  AZO_ESTIMATOR_RESIDUAL_ASYNC = 0,
  AZO_ESTIMATOR_TWO_POINT_ASYNC = 1,
  AZO_ESTIMATOR_TWO_POINT_ASYNC_STORED = 2,
} AzoEstimator;

// Opaque objective handle.
typedef struct AzoObjective AzoObjective;

typedef struct AzoRunOptions {
  enum AzoEstimator estimator;
  // Total function-query budget.
  uint64_t budget_queries;
  double alpha;
  double mu;
  uint64_t seed;
  uint64_t trial_id;
} AzoRunOptions;

typedef struct AzoRunStats {
  uint64_t iterations;
  uint64_t queries;
  uint64_t updates;
  uint64_t bootstraps;
  double final_loss;
} AzoRunStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failed call on this thread, or NULL.
// Valid until the next failing call on the same thread.
const char *azo_last_error_message(void);

// Feature-learning benchmark with `agents` blocks of `input_dim` weights,
// `samples` labelled samples, data drawn from `seed`.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum AzoStatus azo_benchmark_new(size_t agents,
                                 size_t samples,
                                 size_t input_dim,
                                 uint64_t seed,
                                 struct AzoObjective **out);

// `f(x) = ½xᵀAx + bᵀx + c` with `A` row-major `n×n`, `n = Σ block_dims`.
//
// # Safety
// `block_dims` must point to `num_blocks` values, `a` to `n·n` and `b` to
// `n`; `out` must be writable.
enum AzoStatus azo_quadratic_new(const size_t *block_dims,
                                 size_t num_blocks,
                                 const double *a,
                                 const double *b,
                                 double c,
                                 struct AzoObjective **out);

// Random positive-definite quadratic with spectrum in `[1, 2]`.
//
// # Safety
// `block_dims` must point to `num_blocks` values; `out` must be writable.
enum AzoStatus azo_quadratic_random(const size_t *block_dims,
                                    size_t num_blocks,
                                    uint64_t seed,
                                    struct AzoObjective **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `obj` must come from an `azo_*_new` call and not have been freed.
void azo_objective_free(struct AzoObjective *obj);

// Total dimension and number of blocks.
//
// # Safety
// `obj` must be a live handle; the out pointers must be writable.
enum AzoStatus azo_objective_dims(const struct AzoObjective *obj,
                                  size_t *out_dim,
                                  size_t *out_blocks);

// Noiseless objective value at `x`.
//
// # Safety
// `x` must point to `len` values; `out` must be writable.
enum AzoStatus azo_objective_value(const struct AzoObjective *obj,
                                   const double *x,
                                   size_t len,
                                   double *out);

// Analytic gradient at `x` into `grad` (both of length `len`).
//
// # Safety
// `x` and `grad` must point to `len` values each.
enum AzoStatus azo_objective_gradient(const struct AzoObjective *obj,
                                      const double *x,
                                      size_t len,
                                      double *grad);

// Step size and smoothing radius for horizon `horizon`. With
// `step_scaled`, the `√n̄` factor moves from the radius to the step size.
//
// # Safety
// The out pointers must be writable.
enum AzoStatus azo_rate_schedule(double l0,
                                 uint64_t n_bar,
                                 double p_min,
                                 uint64_t horizon,
                                 bool step_scaled,
                                 double *out_alpha,
                                 double *out_mu);

// Closed-form bound on step `k ≥ 1` of `V_k ≤ γ Σ_m β^m V_{k−1−m} + M`.
//
// # Safety
// `out` must be writable.
enum AzoStatus azo_sequence_bound(double gamma,
                                  double beta,
                                  double m_const,
                                  double v0,
                                  uint64_t k,
                                  double *out);

// Residual-async, `10⁴` queries, `α = 0.01`, `μ = 0.1`, seed 1.
struct AzoRunOptions azo_run_options_default(void);

// Runs the asynchronous optimizer from `x` (overwritten with the final
// iterate) with uniform activation.
//
// # Safety
// `options` must be readable, `x` must point to `len` values and `stats`
// must be writable or NULL.
enum AzoStatus azo_run(const struct AzoObjective *obj,
                       const struct AzoRunOptions *options,
                       double *x,
                       size_t len,
                       struct AzoRunStats *stats);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASYNCZO_H */
