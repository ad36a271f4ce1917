#ifndef REFANNO_H
#define REFANNO_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RefannoStatus {
  REFANNO_STATUS_OK = 0,
  REFANNO_STATUS_NULL_POINTER = 1,
  REFANNO_STATUS_INVALID_UTF8 = 2,
  REFANNO_STATUS_IO = 3,
  REFANNO_STATUS_PARSE = 4,
  REFANNO_STATUS_INVALID_ARGUMENT = 5,
  REFANNO_STATUS_PANIC = 6,
} RefannoStatus;

typedef enum RefannoLanguage {
  REFANNO_LANGUAGE_ENGLISH = 0,
  REFANNO_LANGUAGE_PORTUGUESE = 1,
} RefannoLanguage;

/**
 * Opaque mapping table.
 */
typedef struct RefannoLexicon RefannoLexicon;

/**
 * Opaque domain schema.
 */
typedef struct RefannoSchema RefannoSchema;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *refanno_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *refanno_version(void);

/**
 * Loads a mapping table (.tsv or .json).
 *
 * # Safety
 * `path` and `type_attribute` must be NUL-terminated strings; `out` must be
 * writable.
 */
enum RefannoStatus refanno_lexicon_load(const char *path,
                                        const char *type_attribute,
                                        struct RefannoLexicon **out);

/**
 * # Safety
 * `lexicon` must come from `refanno_lexicon_load` and not be freed twice.
 */
void refanno_lexicon_free(struct RefannoLexicon *lexicon);

/**
 * Number of entries in the table.
 *
 * # Safety
 * `lexicon` must be a live handle or null.
 */
size_t refanno_lexicon_len(const struct RefannoLexicon *lexicon);

/**
 * Parses a domain schema from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum RefannoStatus refanno_schema_from_json(const char *json, struct RefannoSchema **out);

/**
 * # Safety
 * `schema` must come from `refanno_schema_from_json` and not be freed twice.
 */
void refanno_schema_free(struct RefannoSchema *schema);

/**
 * Annotates one description. `*out_json` receives the annotation as JSON.
 *
 * # Safety
 * Handles must be live; `text` must be NUL-terminated; `out_json` writable.
 */
enum RefannoStatus refanno_annotate(const struct RefannoLexicon *lexicon,
                                    const struct RefannoSchema *schema,
                                    const char *text,
                                    enum RefannoLanguage language,
                                    char **out_json);

/**
 * Annotates a description and checks it against a scene given as JSON.
 * `*out_json` receives the feedback verdict.
 *
 * # Safety
 * Handles must be live; strings NUL-terminated; `out_json` writable.
 */
enum RefannoStatus refanno_check(const struct RefannoLexicon *lexicon,
                                 const struct RefannoSchema *schema,
                                 const char *scene_json,
                                 const char *text,
                                 enum RefannoLanguage language,
                                 char **out_json);

/**
 * Dice coefficient of two JSON arrays of role-tagged properties.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable.
 */
enum RefannoStatus refanno_dice(const char *a_json, const char *b_json, double *out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void refanno_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REFANNO_H */
