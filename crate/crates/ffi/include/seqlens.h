#ifndef SEQLENS_H
#define SEQLENS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SeqlensStatus {
  SEQLENS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SEQLENS_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SEQLENS_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad input: unreadable or malformed files, invalid query or budget.
   */
  SEQLENS_STATUS_INPUT_ERROR = 3,
  /**
   * Unknown node id.
   */
  SEQLENS_STATUS_NOT_FOUND = 4,
  /**
   * Drill-down or roll-up precondition failed.
   */
  SEQLENS_STATUS_CONFLICT = 5,
  /**
   * The session has no statistics: empty or single-outcome cohort.
   */
  SEQLENS_STATUS_UNAVAILABLE = 6,
  SEQLENS_STATUS_INTERNAL = 7,
} SeqlensStatus;

/**
 * A loaded dataset with its type hierarchy.
 */
typedef struct SeqlensEngine SeqlensEngine;

/**
 * One query over an engine and the cut on display.
 */
typedef struct SeqlensSession SeqlensSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful one. Valid until the next call on the same thread.
 */
const char *seqlens_last_error(void);

/**
 * Engine version as a static string.
 */
const char *seqlens_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void seqlens_string_free(char *s);

/**
 * Loads a dataset directory. `vocab` and `manual` are edge-file paths and
 * may be null.
 *
 * # Safety
 * String arguments must be null or valid nul-terminated strings; `out` must
 * be valid for writes.
 */
enum SeqlensStatus seqlens_engine_load(const char *dataset_dir,
                                       const char *vocab,
                                       const char *manual,
                                       struct SeqlensEngine **out);

/**
 * Releases an engine. Sessions created from it stay valid. Null is ignored.
 *
 * # Safety
 * `engine` must be null or a handle from [`seqlens_engine_load`], not yet
 * freed.
 */
void seqlens_engine_free(struct SeqlensEngine *engine);

/**
 * Cohort attribute summary as JSON.
 *
 * # Safety
 * `engine` must be a live handle; `out` must be valid for writes.
 */
enum SeqlensStatus seqlens_engine_summary_json(const struct SeqlensEngine *engine, char **out);

/**
 * Runs a temporal query (JSON) and selects the initial cut within `budget`.
 *
 * # Safety
 * `engine` must be a live handle, `query_json` a valid nul-terminated
 * string and `out` valid for writes.
 */
enum SeqlensStatus seqlens_session_new(const struct SeqlensEngine *engine,
                                       const char *query_json,
                                       size_t budget,
                                       struct SeqlensSession **out);

/**
 * Releases a session. Null is ignored.
 *
 * # Safety
 * `session` must be null or a handle from [`seqlens_session_new`], not yet
 * freed.
 */
void seqlens_session_free(struct SeqlensSession *session);

/**
 * Matched and unmatched patient counts.
 *
 * # Safety
 * `session` must be a live handle; the out pointers must be valid for
 * writes.
 */
enum SeqlensStatus seqlens_session_counts(const struct SeqlensSession *session,
                                          size_t *matched,
                                          size_t *unmatched);

/**
 * Scatter points of the current cut as a JSON array. A nonzero `budget`
 * different from the current one reselects the cut first.
 *
 * # Safety
 * `session` must be a live handle; `out` must be valid for writes.
 */
enum SeqlensStatus seqlens_session_scatter_json(struct SeqlensSession *session,
                                                size_t budget,
                                                char **out);

/**
 * Replaces `node_id` in the cut by its children; writes the new points.
 *
 * # Safety
 * `session` must be a live handle, `node_id` a valid nul-terminated string
 * and `out` valid for writes.
 */
enum SeqlensStatus seqlens_session_drill_down_json(struct SeqlensSession *session,
                                                   const char *node_id,
                                                   char **out);

/**
 * Collapses the cut nodes below `node_id` into it; writes the new points.
 *
 * # Safety
 * As for [`seqlens_session_drill_down_json`].
 */
enum SeqlensStatus seqlens_session_roll_up_json(struct SeqlensSession *session,
                                                const char *node_id,
                                                char **out);

/**
 * Hierarchy nodes whose label contains `query`, with their statistics.
 *
 * # Safety
 * `session` must be a live handle, `query` a valid nul-terminated string
 * and `out` valid for writes.
 */
enum SeqlensStatus seqlens_session_search_json(const struct SeqlensSession *session,
                                               const char *query,
                                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEQLENS_H */
