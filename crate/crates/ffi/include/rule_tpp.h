#ifndef RULE_TPP_H
#define RULE_TPP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RtppStatus {
  RTPP_STATUS_OK = 0,
  RTPP_STATUS_NULL_POINTER = 1,
  RTPP_STATUS_INVALID_STRING = 2,
  RTPP_STATUS_CONFIG = 3,
  RTPP_STATUS_IO = 4,
  RTPP_STATUS_NUMERICAL = 5,
  RTPP_STATUS_DATA = 6,
  RTPP_STATUS_OUT_OF_RANGE = 7,
  RTPP_STATUS_PANIC = 8,
} RtppStatus;

// A loaded corpus with its catalog.
typedef struct RtppCorpus RtppCorpus;

// A fitted or loaded model report.
typedef struct RtppModel RtppModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *rtpp_last_error(void);

// Library version as a static nul-terminated string.
const char *rtpp_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void rtpp_string_free(char *s);

// Loads a JSONL corpus against a catalog file. `strict` rejects unsorted
// time lists; otherwise they are sorted.
//
// # Safety
// Paths must be nul-terminated; `out` must be writable.
enum RtppStatus rtpp_corpus_load(const char *corpus_path,
                                 const char *catalog_path,
                                 bool strict,
                                 struct RtppCorpus **out);

// # Safety
// `corpus` must be a live handle; `out` writable.
enum RtppStatus rtpp_corpus_len(const struct RtppCorpus *corpus, size_t *out);

// # Safety
// `corpus` must be null or a handle not yet freed.
void rtpp_corpus_free(struct RtppCorpus *corpus);

// Fits a model. `config_path` may be null for defaults; `seed` overrides the
// config seed.
//
// # Safety
// `corpus` must be a live handle, `config_path` null or nul-terminated, `out` writable.
enum RtppStatus rtpp_fit(const struct RtppCorpus *corpus,
                         const char *config_path,
                         uint64_t seed,
                         struct RtppModel **out);

// Loads a model report written by `rtpp_model_save` or the CLI.
//
// # Safety
// `path` nul-terminated; `out` writable.
enum RtppStatus rtpp_model_load(const char *path, struct RtppModel **out);

// # Safety
// `model` live; `path` nul-terminated.
enum RtppStatus rtpp_model_save(const struct RtppModel *model, const char *path);

// # Safety
// `model` must be null or a handle not yet freed.
void rtpp_model_free(struct RtppModel *model);

// Number of learned rules `H`.
//
// # Safety
// `model` live; `out` writable.
enum RtppStatus rtpp_model_rule_count(const struct RtppModel *model, size_t *out);

// Human-readable form of rule `index` (zero-based); free with `rtpp_string_free`.
//
// # Safety
// `model` live; `out` writable.
enum RtppStatus rtpp_model_rule_text(const struct RtppModel *model, size_t index, char **out);

// Spontaneous rate `b0`.
//
// # Safety
// `model` live; `out` writable.
enum RtppStatus rtpp_model_base_rate(const struct RtppModel *model, double *out);

// Copies the `H` rule rates into `buf` (capacity `len`).
//
// # Safety
// `model` live; `buf` writable for `len` doubles.
enum RtppStatus rtpp_model_rule_rates(const struct RtppModel *model, double *buf, size_t len);

// Copies the `H + 1` mixture priors (spontaneous first) into `buf`.
//
// # Safety
// `model` live; `buf` writable for `len` doubles.
enum RtppStatus rtpp_model_priors(const struct RtppModel *model, double *buf, size_t len);

// Per-event explanation of sequence `index` of `corpus` as JSON; free with
// `rtpp_string_free`.
//
// # Safety
// Handles live; `out` writable.
enum RtppStatus rtpp_explain_json(const struct RtppModel *model,
                                  const struct RtppCorpus *corpus,
                                  size_t index,
                                  char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RULE_TPP_H */
