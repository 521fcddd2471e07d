#ifndef TRIAGENT_H
#define TRIAGENT_H

/* Generated by cbindgen from triagent-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every FFI call.
 */
typedef enum TaStatus {
  Ok = 0,
  NullPointer = -1,
  InvalidUtf8 = -2,
  ParseError = -3,
  InvalidInput = -4,
  UnknownScreen = -5,
} TaStatus;

/**
 * Opaque world handle.
 */
typedef struct TaWorld TaWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Releases a string returned by this library. NULL is a no-op.
 */
void ta_string_free(char *ptr);

/**
 * Strict `<think>…</think><answer>…</answer>` envelope check; writes 1 or
 * 0 to `out`.
 */
enum TaStatus ta_check_format(const char *raw, uint8_t *out);

/**
 * Token-level F1 between two strings.
 */
enum TaStatus ta_token_f1(const char *a, const char *b, double *out);

/**
 * Parses an executor answer record; on success writes the action as a JSON
 * string to `out_json`.
 */
enum TaStatus ta_parse_executor_answer(const char *answer, char **out_json);

/**
 * Within-group standardized advantages; `out` must hold `len` doubles.
 */
enum TaStatus ta_group_advantages(const double *rewards,
                                  uintptr_t len,
                                  double std_floor,
                                  double *out);

/**
 * Execution-feedback total reward for one raw output against a
 * ground-truth step (JSON), under default coefficients. The action is
 * parsed out of the raw text; parse failures still earn the format
 * component.
 */
enum TaStatus ta_total_reward(const char *raw, const char *gt_json, double *out);

/**
 * Deserializes and validates a world; returns NULL on any error.
 */
struct TaWorld *ta_world_from_json(const char *json);

/**
 * Number of screens in the world.
 */
enum TaStatus ta_world_screen_count(const struct TaWorld *world, uintptr_t *out);

/**
 * A screen's observation as JSON.
 */
enum TaStatus ta_world_observation(const struct TaWorld *world,
                                   const char *screen_id,
                                   char **out_json);

/**
 * Applies an action (JSON) on a screen; writes the successor screen id.
 */
enum TaStatus ta_world_apply_action(const struct TaWorld *world,
                                    const char *screen_id,
                                    const char *action_json,
                                    char **out_screen);

/**
 * Releases a world handle. NULL is a no-op.
 */
void ta_world_free(struct TaWorld *world);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIAGENT_H */
