#ifndef QDISC_H
#define QDISC_H

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every fallible call.
 */
typedef enum QdiscStatus {
  QDISC_STATUS_OK = 0,
  QDISC_STATUS_NULL_POINTER = 1,
  QDISC_STATUS_INVALID_ARGUMENT = 2,
  QDISC_STATUS_DIMENSION_MISMATCH = 3,
  QDISC_STATUS_NOT_POSITIVE = 4,
  QDISC_STATUS_NUMERICAL = 5,
  QDISC_STATUS_CAP_EXCEEDED = 6,
  QDISC_STATUS_UNKNOWN_SUITE = 7,
  QDISC_STATUS_UNAVAILABLE = 8,
  QDISC_STATUS_IO = 9,
  QDISC_STATUS_PANIC = 10,
} QdiscStatus;

/*
 Divergence selector; `param` carries the order α or the error ε.
 */
typedef enum QdiscDivergence {
  /*
   Umegaki relative entropy; `param` ignored.
   */
  QDISC_DIVERGENCE_UMEGAKI = 0,
  /*
   Petz Rényi divergence of order `param`.
   */
  QDISC_DIVERGENCE_PETZ = 1,
  /*
   Geometric Rényi divergence of order `param`.
   */
  QDISC_DIVERGENCE_GEOMETRIC = 2,
  /*
   Max-relative entropy; `param` ignored.
   */
  QDISC_DIVERGENCE_DMAX = 3,
  /*
   Hypothesis-testing divergence at error `param`.
   */
  QDISC_DIVERGENCE_HYPOTHESIS = 4,
} QdiscDivergence;

/*
 Quantum channel handle.
 */
typedef struct QdiscChannel QdiscChannel;

/*
 Suite report handle.
 */
typedef struct QdiscReport QdiscReport;

/*
 Density operator handle.
 */
typedef struct QdiscState QdiscState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread (empty after a success).
 The pointer stays valid until the next call on the same thread.
 */
const char *qdisc_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *qdisc_version(void);

/*
 Normalized density operator from a row-major `dim × dim` matrix.
 `im` may be null for a real matrix.

 # Safety
 `re` (and `im` when non-null) must point to `dim * dim` doubles; `out`
 must be writable.
 */
enum QdiscStatus qdisc_state_new(const double *re,
                                 const double *im,
                                 size_t dim,
                                 struct QdiscState **out);

/*
 Diagonal density operator from a probability vector of length `n`.

 # Safety
 `p` must point to `n` doubles; `out` must be writable.
 */
enum QdiscStatus qdisc_state_from_diag(const double *p, size_t n, struct QdiscState **out);

/*
 Random density operator of the given rank, reproducible from `seed`.

 # Safety
 `out` must be writable.
 */
enum QdiscStatus qdisc_state_random(size_t dim,
                                    size_t rank,
                                    uint64_t seed,
                                    struct QdiscState **out);

/*
 Dimension of a state, or 0 for a null handle.

 # Safety
 `state` must be null or a live handle.
 */
size_t qdisc_state_dim(const struct QdiscState *state);

/*
 Copies the row-major matrix of `state` into `re` and `im` (`dim * dim` each;
 `im` may be null).

 # Safety
 `state` must be a live handle; `re` and non-null `im` must hold `dim * dim` doubles.
 */
enum QdiscStatus qdisc_state_matrix(const struct QdiscState *state, double *re, double *im);

/*
 Releases a state handle. Null is ignored.

 # Safety
 `state` must be null or a handle not yet freed.
 */
void qdisc_state_free(struct QdiscState *state);

/*
 Divergence `D(ρ‖σ)` in bits; `+inf` is a valid result.

 # Safety
 `rho` and `sigma` must be live handles; `out` must be writable.
 */
enum QdiscStatus qdisc_divergence(enum QdiscDivergence which,
                                  double param,
                                  const struct QdiscState *rho,
                                  const struct QdiscState *sigma,
                                  double *out);

/*
 Fidelity `‖√ρ√σ‖₁²`.

 # Safety
 `rho` and `sigma` must be live handles; `out` must be writable.
 */
enum QdiscStatus qdisc_fidelity(const struct QdiscState *rho,
                                const struct QdiscState *sigma,
                                double *out);

/*
 Trace distance `½‖ρ − σ‖₁`.

 # Safety
 `rho` and `sigma` must be live handles; `out` must be writable.
 */
enum QdiscStatus qdisc_trace_distance(const struct QdiscState *rho,
                                      const struct QdiscState *sigma,
                                      double *out);

/*
 Identity channel on dimension `dim`.

 # Safety
 `out` must be writable.
 */
enum QdiscStatus qdisc_channel_identity(size_t dim, struct QdiscChannel **out);

/*
 Channel that discards its `dim_in`-dimensional input and prepares `state`.

 # Safety
 `state` must be a live handle; `out` must be writable.
 */
enum QdiscStatus qdisc_channel_replacer(const struct QdiscState *state,
                                        size_t dim_in,
                                        struct QdiscChannel **out);

/*
 `ρ ↦ (1 − λ)ρ + λ Tr[ρ] τ`.

 # Safety
 `tau` must be a live handle; `out` must be writable.
 */
enum QdiscStatus qdisc_channel_depolarizing(const struct QdiscState *tau,
                                            double lambda,
                                            struct QdiscChannel **out);

/*
 Random channel with an environment of dimension `env_dim`, reproducible from `seed`.

 # Safety
 `out` must be writable.
 */
enum QdiscStatus qdisc_channel_random(size_t dim_in,
                                      size_t dim_out,
                                      size_t env_dim,
                                      uint64_t seed,
                                      struct QdiscChannel **out);

/*
 Input and output dimensions of a channel.

 # Safety
 `channel` must be a live handle; `dim_in` and `dim_out` must be writable.
 */
enum QdiscStatus qdisc_channel_dims(const struct QdiscChannel *channel,
                                    size_t *dim_in,
                                    size_t *dim_out);

/*
 Applies `channel` to `state`, returning a new state handle.

 # Safety
 `channel` and `state` must be live handles; `out` must be writable.
 */
enum QdiscStatus qdisc_channel_apply(const struct QdiscChannel *channel,
                                     const struct QdiscState *state,
                                     struct QdiscState **out);

/*
 Releases a channel handle. Null is ignored.

 # Safety
 `channel` must be null or a handle not yet freed.
 */
void qdisc_channel_free(struct QdiscChannel *channel);

/*
 Optimized lower bound on the stabilized channel divergence, with
 multistart restarts drawn from `seed`.

 # Safety
 `e` and `f` must be live handles; `out` must be writable.
 */
enum QdiscStatus qdisc_channel_divergence(enum QdiscDivergence which,
                                          double param,
                                          const struct QdiscChannel *e,
                                          const struct QdiscChannel *f,
                                          uint64_t seed,
                                          double *out);

/*
 Exact geometric Rényi channel divergence of order `alpha`. Returns
 `Unavailable` when the Choi operator of `f` is singular.

 # Safety
 `e` and `f` must be live handles; `out` must be writable.
 */
enum QdiscStatus qdisc_geometric_channel_exact(double alpha,
                                               const struct QdiscChannel *e,
                                               const struct QdiscChannel *f,
                                               double *out);

/*
 Runs a property suite. `size == 0` selects the suite's default size.

 # Safety
 `name` must be a NUL-terminated string; `out` must be writable.
 */
enum QdiscStatus qdisc_suite_run(const char *name,
                                 uint64_t master_seed,
                                 size_t size,
                                 struct QdiscReport **out);

/*
 Number of cases run, or 0 for a null handle.

 # Safety
 `report` must be null or a live handle.
 */
size_t qdisc_report_cases(const struct QdiscReport *report);

/*
 Number of failed checks, or 0 for a null handle.

 # Safety
 `report` must be null or a live handle.
 */
size_t qdisc_report_failures(const struct QdiscReport *report);

/*
 JSON rendering of a report; release the string with `qdisc_string_free`.

 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum QdiscStatus qdisc_report_json(const struct QdiscReport *report, char **out);

/*
 Releases a report handle. Null is ignored.

 # Safety
 `report` must be null or a handle not yet freed.
 */
void qdisc_report_free(struct QdiscReport *report);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string from this library not yet freed.
 */
void qdisc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDISC_H */
