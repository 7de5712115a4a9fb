/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef ENGAGE_H
#define ENGAGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EngageStatus {
  ENGAGE_STATUS_OK = 0,
  ENGAGE_STATUS_NULL_POINTER = 1,
  ENGAGE_STATUS_INVALID_UTF8 = 2,
  // A protocol line could not be decoded; the engine also queued an
  // `Error` message for the client.
  ENGAGE_STATUS_DECODE = 3,
  // Input was well formed but rejected.
  ENGAGE_STATUS_INVALID = 4,
  // Nothing to return.
  ENGAGE_STATUS_EMPTY = 5,
  ENGAGE_STATUS_PANIC = 6,
} EngageStatus;

// Opaque engine handle.
typedef struct EngageEngine EngageEngine;

typedef struct EngageAnova {
  double f;
  double p;
  uint32_t df_between;
  uint32_t df_within;
  // 0 regular, 1 zero within-group variance (F infinite, p 0), 2 all
  // samples equal (F 0, p 1).
  uint32_t degenerate;
} EngageAnova;

typedef struct EngageTracking {
  uint32_t tracked;
  uint32_t quick_looks;
  uint32_t nods;
  uint32_t uncategorized;
} EngageTracking;

typedef struct EngageNod {
  double probability;
  bool detected;
  uint64_t window_start;
  uint64_t window_end;
} EngageNod;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *engage_last_error(void);

// # Safety
// `s` must be null or a string returned by this library, freed once.
void engage_string_free(char *s);

// Creates an engine. `library` and `scene` hold file contents; null selects
// the bundled demo.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be valid for
// one pointer write.
enum EngageStatus engage_engine_new(const char *library,
                                    const char *scene,
                                    struct EngageEngine **out);

// # Safety
// `e` must be null or a handle from [`engage_engine_new`], freed once.
void engage_engine_free(struct EngageEngine *e);

// Feeds one client protocol line.
//
// # Safety
// `e` must be a live handle; `line` a NUL-terminated string.
enum EngageStatus engage_engine_feed_line(struct EngageEngine *e, const char *line);

// Runs internal events up to simulated time `t_ms`.
//
// # Safety
// `e` must be a live handle.
enum EngageStatus engage_engine_advance(struct EngageEngine *e, uint64_t t_ms);

// Time of the next internal event; `Empty` when none is pending.
//
// # Safety
// `e` must be a live handle; `out` valid for one write.
enum EngageStatus engage_engine_next_due(struct EngageEngine *e, uint64_t *out);

// Pops the next engine output line (newline terminated); `Empty` when the
// queue is drained.
//
// # Safety
// `e` must be a live handle; `out` valid for one pointer write.
enum EngageStatus engage_engine_poll(struct EngageEngine *e, char **out);

// Engagement phase name, e.g. `Engaged`.
//
// # Safety
// `e` must be a live handle; `out` valid for one pointer write.
enum EngageStatus engage_engine_phase(struct EngageEngine *e, char **out);

// Rendered discourse history.
//
// # Safety
// `e` must be a live handle; `out` valid for one pointer write.
enum EngageStatus engage_engine_history(struct EngageEngine *e, char **out);

// Behavioral measures of the session so far as JSON.
//
// # Safety
// `e` must be a live handle; `out` valid for one pointer write.
enum EngageStatus engage_engine_metrics_json(struct EngageEngine *e, char **out);

// Single-factor ANOVA. `values` holds the groups back to back;
// `group_sizes[i]` says how many belong to group `i`.
//
// # Safety
// `values` must hold the sum of `group_sizes` doubles, `group_sizes` must
// hold `n_groups` entries and `out` must be valid for one write.
enum EngageStatus engage_anova(const double *values,
                               const uintptr_t *group_sizes,
                               uintptr_t n_groups,
                               struct EngageAnova *out);

// Classifies host looks in an annotation text.
//
// # Safety
// `annotations` must be NUL-terminated; `out` valid for one write.
enum EngageStatus engage_classify_tracking(const char *annotations, struct EngageTracking *out);

// Scores a head-pitch trace sampled at a fixed tick. `Empty` when the
// trace is shorter than one detector window.
//
// # Safety
// `t_ms` and `pitch_deg` must each hold `n` values; `out` valid for one write.
enum EngageStatus engage_detect_nod(const uint64_t *t_ms,
                                    const double *pitch_deg,
                                    uintptr_t n,
                                    struct EngageNod *out);

// Library version; the string is static and must not be freed.
const char *engage_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENGAGE_H */
