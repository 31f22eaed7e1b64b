#ifndef W2GRID_H
#define W2GRID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirroring the CLI's exit codes.
 */
typedef enum W2gStatus {
  W2gStatus_Ok = 0,
  /**
   * Null pointer, malformed UTF-8/JSON, or bad arguments.
   */
  W2gStatus_Usage = 1,
  /**
   * Validation or file-format failure.
   */
  W2gStatus_Data = 2,
  /**
   * Numeric or decoding failure at run time.
   */
  W2gStatus_Runtime = 3,
} W2gStatus;

/**
 * Opaque trained-model handle (checkpoint plus vocabulary).
 */
typedef struct W2gModel W2gModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *w2g_last_error(void);

/**
 * Loads a checkpoint file into a model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum W2gStatus w2g_model_load(const char *path, struct W2gModel **out);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from `w2g_model_load` and not be used afterwards.
 */
void w2g_model_free(struct W2gModel *model);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from a `w2g_*` function and not be used afterwards.
 */
void w2g_string_free(char *s);

/**
 * Predicts entities for one sentence. `tokens_json` is a JSON array of
 * strings; on success `*out` is a JSON array of
 * `{"indices": [...], "type": "..."}` objects.
 *
 * # Safety
 * `model` must be a live handle; `tokens_json` NUL-terminated; `out` valid.
 */
enum W2gStatus w2g_predict(const struct W2gModel *model, const char *tokens_json, char **out);

/**
 * Encodes a sentence into its relation grid.
 * `sentence_json`: `{"tokens": [...], "entities": [...]}`;
 * `types_json`: JSON array of entity type names.
 * On success `*out` is `{"n": N, "cells": [[i, j, "LABEL"], ...]}`.
 *
 * # Safety
 * All pointers must be valid; strings NUL-terminated.
 */
enum W2gStatus w2g_encode(const char *sentence_json, const char *types_json, char **out);

/**
 * Decodes a relation grid (format produced by `w2g_encode`) back into
 * entities; `*out` receives the same JSON shape as `w2g_predict`.
 *
 * # Safety
 * All pointers must be valid; strings NUL-terminated.
 */
enum W2gStatus w2g_decode(const char *grid_json, const char *types_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* W2GRID_H */
