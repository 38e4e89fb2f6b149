#ifndef SERUM_H
#define SERUM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum SerumStatus {
  SerumStatus_Ok = 0,
  SerumStatus_NullArgument = 1,
  SerumStatus_InvalidUtf8 = 2,
  SerumStatus_InvalidParam = 3,
  SerumStatus_EmptyCorpus = 4,
  SerumStatus_EmptyContinuation = 5,
  SerumStatus_EmptyCandidates = 6,
  SerumStatus_InvalidK = 7,
  SerumStatus_UnknownMethod = 8,
  SerumStatus_InvalidCandidate = 9,
  SerumStatus_Internal = 10,
} SerumStatus;

/**
 * Opaque handle to a trained n-gram scoring model.
 */
typedef struct SerumNgram SerumNgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Trains an n-gram model on a whitespace-tokenized corpus and stores the
 * handle in `out`. Free it with `serum_ngram_free`.
 *
 * # Safety
 * `corpus` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SerumStatus serum_ngram_train(const char *corpus,
                                   uintptr_t order,
                                   double smoothing_k,
                                   struct SerumNgram **out);

/**
 * Releases a model handle. Passing NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a pointer returned by `serum_ngram_train` that
 * has not been freed yet.
 */
void serum_ngram_free(struct SerumNgram *model);

/**
 * Scores a continuation given a context. On success writes the total
 * log-probability (nats) and the continuation token count.
 *
 * # Safety
 * `model` must be a live handle; strings must be valid NUL-terminated
 * UTF-8; output pointers may be NULL if the value is not wanted.
 */
enum SerumStatus serum_ngram_score(const struct SerumNgram *model,
                                   const char *context,
                                   const char *continuation,
                                   double *total_logprob,
                                   uintptr_t *token_count);

/**
 * Log-space posterior/prior score of a single candidate:
 * `logp_post - logp_prior`.
 */
double serum_tau(double logp_post, double logp_prior);

/**
 * Applies a selection method to parallel arrays of candidate scores and
 * writes the chosen candidate index.
 *
 * `method` is the flag-style name (e.g. "max_ratio", "top_k_min_prior:k=3").
 * `token_counts` may be NULL, in which case every candidate counts one
 * token (only the length-normalized method reads it).
 *
 * # Safety
 * `logp_post` and `logp_prior` must point to `n` doubles; `token_counts`
 * must be NULL or point to `n` entries; `chosen_index` must be valid.
 */
enum SerumStatus serum_select(const char *method,
                              const double *logp_post,
                              const double *logp_prior,
                              const uintptr_t *token_counts,
                              uintptr_t n,
                              uintptr_t *chosen_index);

/**
 * Expected peer-prediction reward of reporting `candidate`: the peer
 * probability of the label divided by its empirical frequency among
 * `counts`.
 *
 * # Safety
 * `peer_probs` and `counts` must point to `n` entries; `out` must be valid.
 */
enum SerumStatus serum_pts_expected_reward(const double *peer_probs,
                                           const uint64_t *counts,
                                           uintptr_t n,
                                           uintptr_t candidate,
                                           double *out);

/**
 * Library version as a newly allocated C string; free with
 * `serum_string_free`.
 */
char *serum_version(void);

/**
 * Frees a string allocated by this library. Passing NULL is a no-op.
 *
 * # Safety
 * `s` must be NULL or a pointer returned by `serum_version` that has not
 * been freed yet.
 */
void serum_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SERUM_H */
