#ifndef ROBUST_L2D_H
#define ROBUST_L2D_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum L2dNorm {
  L2D_NORM_LINF = 0,
  L2D_NORM_L2 = 1,
} L2dNorm;

typedef enum L2dStatus {
  L2D_STATUS_OK = 0,
  L2D_STATUS_NULL_POINTER = 1,
  L2D_STATUS_INVALID_ARGUMENT = 2,
  L2D_STATUS_DIMENSION = 3,
  L2D_STATUS_IO = 4,
  L2D_STATUS_PARSE = 5,
  L2D_STATUS_PANIC = 6,
} L2dStatus;

/**
 * Opaque rejector scorer.
 */
typedef struct L2dScorer L2dScorer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *l2d_last_error(void);

/**
 * Library version as a static string.
 */
const char *l2d_version(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void l2d_string_free(char *s);

/**
 * Creates an MLP scorer (linear when `n_hidden` is 0) with seeded weights.
 *
 * # Safety
 * `hidden` points to `n_hidden` values; `out` is writable.
 */
enum L2dStatus l2d_scorer_new(size_t input_dim,
                              const size_t *hidden,
                              size_t n_hidden,
                              size_t num_agents,
                              uint64_t seed,
                              struct L2dScorer **out);

/**
 * Loads a scorer checkpoint written by the command-line tool.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum L2dStatus l2d_scorer_load(const char *path, struct L2dScorer **out);

/**
 * # Safety
 * `s` must come from this library and not have been freed. Null is ignored.
 */
void l2d_scorer_free(struct L2dScorer *s);

/**
 * # Safety
 * `s` is a live scorer handle or null (returns 0).
 */
size_t l2d_scorer_input_dim(const struct L2dScorer *s);

/**
 * # Safety
 * `s` is a live scorer handle or null (returns 0).
 */
size_t l2d_scorer_num_agents(const struct L2dScorer *s);

/**
 * Scores `x` (length `input_dim`) into `out` (length `num_agents`).
 *
 * # Safety
 * Buffers hold the stated number of values.
 */
enum L2dStatus l2d_scorer_forward(const struct L2dScorer *s,
                                  const double *x,
                                  size_t x_len,
                                  double *out,
                                  size_t out_len);

/**
 * Agent the rejector routes `x` to.
 *
 * # Safety
 * `x` holds `x_len` values; `out` is writable.
 */
enum L2dStatus l2d_scorer_route(const struct L2dScorer *s,
                                const double *x,
                                size_t x_len,
                                size_t *out);

/**
 * `Psi^u(v)`.
 *
 * # Safety
 * `out` is writable.
 */
enum L2dStatus l2d_psi_u(double v, double u, double *out);

double l2d_psi_rho(double v, double rho);

/**
 * `tau[j]`: sum of the other agents' costs.
 *
 * # Safety
 * `costs` and `tau` hold `n` values each.
 */
enum L2dStatus l2d_aggregate_costs(const double *costs, size_t n, double *tau);

/**
 * Cost paid when the query goes to agent `chosen`.
 *
 * # Safety
 * `costs` holds `n` values; `out` is writable.
 */
enum L2dStatus l2d_deferral_loss(const double *costs, size_t n, size_t chosen, double *out);

/**
 * Comp-sum deferral surrogate of scores `s` under weights `tau`.
 *
 * # Safety
 * `tau` and `s` hold `n` values; `out` is writable.
 */
enum L2dStatus l2d_comp_sum_deferral(const double *tau,
                                     const double *s,
                                     size_t n,
                                     double u,
                                     double *out);

/**
 * Untargeted PGD on the comp-sum deferral surrogate, started at `x`.
 *
 * # Safety
 * `x` and `x_out` hold `dim` values; `tau` holds `num_agents` values.
 */
enum L2dStatus l2d_untargeted_attack(const struct L2dScorer *s,
                                     const double *tau,
                                     size_t n_tau,
                                     const double *x,
                                     size_t dim,
                                     enum L2dNorm norm,
                                     double gamma,
                                     size_t steps,
                                     double step_size,
                                     uint64_t seed,
                                     double *x_out);

/**
 * Runs one verification suite (`identities`, `gradients`, `attacks`,
 * `bounds`) and returns its JSON report in `json_out`. `proof_derived`
 * selects the bound constant. `passed` is set to 1 when every check holds.
 *
 * # Safety
 * `suite` is a NUL-terminated string; `json_out` and `passed` are writable.
 * The returned string is released with [`l2d_string_free`].
 */
enum L2dStatus l2d_verify(const char *suite,
                          uint64_t seed,
                          bool proof_derived,
                          char **json_out,
                          int32_t *passed);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ROBUST_L2D_H */
