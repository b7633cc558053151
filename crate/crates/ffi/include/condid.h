#ifndef CONDID_H
#define CONDID_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CondidStatus {
  CONDID_STATUS_OK = 0,
  CONDID_STATUS_NULL_POINTER = 1,
  CONDID_STATUS_INVALID_UTF8 = 2,
  CONDID_STATUS_INVALID_TASK = 3,
  CONDID_STATUS_INVALID_JSON = 4,
  /**
   * A gold label handed to a scorer did not parse.
   */
  CONDID_STATUS_INVALID_GOLD = 5,
  /**
   * Metrics could not be computed, e.g. nothing was pushed.
   */
  CONDID_STATUS_METRICS = 6,
  CONDID_STATUS_PANIC = 7,
} CondidStatus;

/**
 * Accumulates (gold, reply) pairs for one task and reports metrics.
 */
typedef struct CondidScorer CondidScorer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next condid call on the same thread.
 */
const char *condid_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 */
void condid_string_free(char *s);

/**
 * Library version, statically allocated.
 */
const char *condid_version(void);

/**
 * Parses a free-text model reply for `task` (1-5). Writes the label as
 * JSON to `out_label` and whether the reply was usable to `out_compliant`.
 */
enum CondidStatus condid_parse_response(uint8_t task_number,
                                        const char *response,
                                        char **out_label,
                                        bool *out_compliant);

/**
 * Renders the model-facing prompt for an instruction record given as JSON.
 */
enum CondidStatus condid_render_prompt(const char *record_json, char **out_prompt);

/**
 * Wraps a rendered prompt for plain completion endpoints.
 */
enum CondidStatus condid_wrap_completion_prompt(const char *prompt, char **out);

/**
 * Formats the affective block appended to task prompts from a profile
 * given as JSON.
 */
enum CondidStatus condid_format_affective_block(const char *profile_json, char **out_block);

/**
 * Creates a scorer for `task` (1-5).
 */
enum CondidStatus condid_scorer_new(uint8_t task_number, struct CondidScorer **out);

/**
 * Adds one example. `gold` is the reference answer string, `response` the
 * raw model reply. A gold that does not parse is rejected and nothing is
 * added.
 */
enum CondidStatus condid_scorer_push(struct CondidScorer *scorer,
                                     const char *gold,
                                     const char *response);

/**
 * Number of examples pushed so far; 0 for NULL.
 */
size_t condid_scorer_len(const struct CondidScorer *scorer);

/**
 * Writes a JSON report with `task`, `n`, `non_compliant`,
 * `non_compliance_rate` and `metrics`. The scorer stays usable.
 */
enum CondidStatus condid_scorer_finish(const struct CondidScorer *scorer, char **out_json);

/**
 * Destroys a scorer. NULL is ignored.
 */
void condid_scorer_free(struct CondidScorer *scorer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONDID_H */
