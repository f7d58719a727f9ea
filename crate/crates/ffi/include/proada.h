#ifndef PROADA_H
#define PROADA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ProadaStatus {
  PROADA_STATUS_OK = 0,
  PROADA_STATUS_NULL_ARGUMENT = 1,
  PROADA_STATUS_INVALID_UTF8 = 2,
  PROADA_STATUS_INVALID_JSON = 3,
  PROADA_STATUS_PARSE_ERROR = 4,
  PROADA_STATUS_EVAL_ERROR = 5,
  PROADA_STATUS_CORPUS_ERROR = 6,
  PROADA_STATUS_PROVIDER_ERROR = 7,
  PROADA_STATUS_SESSION_ERROR = 8,
  PROADA_STATUS_SESSION_CONCLUDED = 9,
  PROADA_STATUS_PANIC = 10,
} ProadaStatus;

/**
 * A directory of checkers.
 */
typedef struct ProadaCorpus ProadaCorpus;

/**
 * A parsed rule program.
 */
typedef struct ProadaProgram ProadaProgram;

/**
 * A live dialog session.
 */
typedef struct ProadaSession ProadaSession;

/**
 * Micro-averaged scores on the 0-100 scale.
 */
typedef struct ProadaF1 {
  double precision;
  double recall;
  double f1;
  bool degenerate;
} ProadaF1;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message for the last failed call on this thread, or null. Valid
 * until the next call into this library from the same thread.
 */
const char *proada_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void proada_string_free(char *s);

/**
 * Parse rule source for `opportunity_id` into a program handle.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum ProadaStatus proada_program_parse(const char *source,
                                       const char *opportunity_id,
                                       struct ProadaProgram **out);

/**
 * # Safety
 * `program` must be null or a handle from [`proada_program_parse`].
 */
void proada_program_free(struct ProadaProgram *program);

/**
 * Canonical source text of a program.
 *
 * # Safety
 * `program` must be a live handle; `out` must be writable.
 */
enum ProadaStatus proada_program_pretty(const struct ProadaProgram *program, char **out);

/**
 * Evaluate a program against a household profile given as JSON
 * (`{"members":[{...}],"household":{...}}`). Writes
 * `{"outcome":"decision","eligible":b,"trace":[ids]}` or
 * `{"outcome":"missing","key":"...","node":n}`.
 *
 * # Safety
 * `program` must be a live handle; `household_json` NUL-terminated; `out`
 * writable.
 */
enum ProadaStatus proada_program_evaluate(const struct ProadaProgram *program,
                                          const char *household_json,
                                          char **out);

/**
 * F1 discounted by mean turns, both on the 0-100 scale.
 */
double proada_turn_weighted_f1(double f1, double turns);

/**
 * Micro-averaged precision, recall and F1 over `n` prediction/gold pairs.
 *
 * # Safety
 * `predictions` and `gold` must each point to `n` readable bools.
 */
enum ProadaStatus proada_micro_f1(const bool *predictions,
                                  const bool *gold,
                                  size_t n,
                                  struct ProadaF1 *out);

/**
 * Load every `*.rule` with its schema from a directory.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` writable.
 */
enum ProadaStatus proada_corpus_load(const char *dir, struct ProadaCorpus **out);

/**
 * # Safety
 * `corpus` must be null or a handle from [`proada_corpus_load`]. Sessions
 * opened from it stay valid after it is freed.
 */
void proada_corpus_free(struct ProadaCorpus *corpus);

/**
 * Open a session over the opportunities named in a JSON array, answered
 * by the built-in deterministic mock provider.
 *
 * # Safety
 * `corpus` must be a live handle; `opportunity_ids_json` NUL-terminated;
 * `out` writable.
 */
enum ProadaStatus proada_session_open_mock(const struct ProadaCorpus *corpus,
                                           const char *opportunity_ids_json,
                                           uint64_t seed,
                                           struct ProadaSession **out);

/**
 * Like [`proada_session_open_mock`] but talks to the chat endpoint named by
 * `PROVIDER_BASE_URL`, authenticating with `PROVIDER_API_KEY`.
 *
 * # Safety
 * As for [`proada_session_open_mock`].
 */
enum ProadaStatus proada_session_open_http(const struct ProadaCorpus *corpus,
                                           const char *opportunity_ids_json,
                                           struct ProadaSession **out);

/**
 * # Safety
 * `session` must be null or a handle from a `proada_session_open_*` call.
 */
void proada_session_free(struct ProadaSession *session);

/**
 * Advance to the first question or to the decisions, then write the
 * session state as JSON (the same shape the HTTP API returns).
 *
 * # Safety
 * `session` must be a live handle not used concurrently; `out` writable.
 */
enum ProadaStatus proada_session_step(struct ProadaSession *session, char **out);

/**
 * Answer the pending question and advance; writes the new state as JSON.
 *
 * # Safety
 * `session` must be a live handle not used concurrently; `text`
 * NUL-terminated; `out` writable.
 */
enum ProadaStatus proada_session_answer(struct ProadaSession *session,
                                        const char *text,
                                        char **out);

/**
 * Current session state as JSON without advancing.
 *
 * # Safety
 * `session` must be a live handle; `out` writable.
 */
enum ProadaStatus proada_session_state(const struct ProadaSession *session, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROADA_H */
