#ifndef SLICED_H
#define SLICED_H

#include <stdbool.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum SlicedStatus {
  SLICED_STATUS_OK = 0,
  SLICED_STATUS_NULL_ARGUMENT = 1,
  SLICED_STATUS_INVALID_UTF8 = 2,
  // The model, config, goal or failure list could not be read.
  SLICED_STATUS_INVALID_INPUT = 3,
  // The analysis could not run on this model.
  SLICED_STATUS_ANALYSIS_FAILED = 4,
  // The state cap was reached before a verdict.
  SLICED_STATUS_CAP_EXCEEDED = 5,
  // A bug: the library panicked.
  SLICED_STATUS_INTERNAL = 6,
} SlicedStatus;

// A loaded model together with the config it was built with.
typedef struct SlicedModel SlicedModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a model document (JSON). `config_json` may be null for defaults.
enum SlicedStatus sliced_model_parse(const char *model_json,
                                     const char *config_json,
                                     struct SlicedModel **out);

// Releases a model. Null is ignored.
void sliced_model_free(struct SlicedModel *model);

// Block counts as a JSON object.
enum SlicedStatus sliced_model_stats(const struct SlicedModel *model, char **out_json);

// The NuSMV text with the auto-generated assertion suite.
enum SlicedStatus sliced_model_translate(const struct SlicedModel *model,
                                         bool faithful_listing,
                                         char **out_smv);

// Checks the auto-generated suite. `out_verdict` receives 0 when all hold,
// 1 when any is falsified and 2 otherwise; `out_report` (nullable) receives
// the verdicts and counterexamples as text.
enum SlicedStatus sliced_model_check_auto(const struct SlicedModel *model,
                                          int32_t *out_verdict,
                                          char **out_report);

// Searches for a repair plan. `failures` is a comma-separated list of
// `NAME=STATE`; `goal` is a predicate. `out_found` receives whether a plan
// exists and `out_trace` (nullable) the plan or a short explanation.
enum SlicedStatus sliced_model_plan(const struct SlicedModel *model,
                                    const char *failures,
                                    const char *goal,
                                    bool *out_found,
                                    char **out_trace);

// Releases a string returned by this library. Null is ignored.
void sliced_string_free(char *s);

// Message for the last failed call on this thread, or null. Valid until
// the next call into the library on the same thread.
const char *sliced_last_error(void);

// Library version as a static string.
const char *sliced_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLICED_H */
