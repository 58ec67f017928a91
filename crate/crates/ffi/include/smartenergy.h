#ifndef SMARTENERGY_H
#define SMARTENERGY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Zone codes used by the presence calls.
 */
#define SE_ZONE_UNKNOWN 0

#define SE_ZONE_INSIDE 1

#define SE_ZONE_OUTSIDE 2

/**
 * Event codes written by [`se_presence_step`].
 */
#define SE_EVENT_NONE 0

#define SE_EVENT_ENTER 1

#define SE_EVENT_EXIT 2

typedef enum SeStatus {
  SE_STATUS_OK = 0,
  SE_STATUS_NULL_ARGUMENT = 1,
  SE_STATUS_INVALID_UTF8 = 2,
  SE_STATUS_CHECKSUM_MISMATCH = 3,
  SE_STATUS_FORMAT_ERROR = 4,
  SE_STATUS_VOID_FIX = 5,
  SE_STATUS_UNSUPPORTED = 6,
  SE_STATUS_STALE_FIX = 7,
  SE_STATUS_INVALID_ARGUMENT = 8,
  SE_STATUS_CONFIG_ERROR = 9,
  SE_STATUS_RUNTIME_ERROR = 10,
  SE_STATUS_PANIC = 11,
} SeStatus;

/**
 * One geofence and its hysteresis state.
 */
typedef struct SePresence SePresence;

/**
 * A runtime with an in-process fleet and an in-memory event log, driven
 * through the JSON API on a caller-controlled clock.
 */
typedef struct SeRuntime SeRuntime;

/**
 * A decoded position sentence. Coordinates are only meaningful when
 * `has_position` is true.
 */
typedef struct SeFix {
  uint32_t time_of_day;
  double latitude;
  double longitude;
  bool has_position;
} SeFix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *se_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void se_string_free(char *s);

/**
 * XOR checksum of the bytes between `$` and `*`.
 *
 * # Safety
 * `body` must be a valid NUL-terminated string and `out` writable.
 */
enum SeStatus se_nmea_checksum(const char *body, uint8_t *out);

/**
 * Parses a GGA or RMC sentence.
 *
 * # Safety
 * `line` must be a valid NUL-terminated string and `out` writable.
 */
enum SeStatus se_nmea_parse(const char *line, struct SeFix *out);

/**
 * Great-circle distance in meters.
 */
double se_haversine_m(double lat1, double lon1, double lat2, double lon2);

/**
 * Creates a fence centred on (`lat`, `lon`) with a known starting zone.
 *
 * # Safety
 * `out` must be writable.
 */
enum SeStatus se_presence_new(double lat,
                              double lon,
                              double enter_radius_m,
                              double exit_radius_m,
                              uint32_t min_dwell_fixes,
                              int32_t initial_zone,
                              struct SePresence **out);

/**
 * Feeds one fix taken at `t` (seconds). Writes an `SE_EVENT_*` code.
 *
 * # Safety
 * `handle` must come from [`se_presence_new`]; `event` must be writable.
 */
enum SeStatus se_presence_step(struct SePresence *handle,
                               int64_t t,
                               double lat,
                               double lon,
                               int32_t *event);

/**
 * Current `SE_ZONE_*` code, or -1 for a null handle.
 *
 * # Safety
 * `handle` must be null or come from [`se_presence_new`].
 */
int32_t se_presence_zone(const struct SePresence *handle);

/**
 * # Safety
 * `handle` must be null or come from [`se_presence_new`], freed once.
 */
void se_presence_free(struct SePresence *handle);

/**
 * Daily kWh estimate for a site under `mode` ("luxury", "moderate",
 * "frugal"). A null `config_toml` uses the bundled deployment.
 *
 * # Safety
 * String arguments must be null-terminated; `out_kwh` writable.
 */
enum SeStatus se_estimate_mode(const char *config_toml,
                               const char *site,
                               const char *mode,
                               double *out_kwh);

/**
 * Builds a runtime whose clock starts at `start` (seconds).
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` writable.
 */
enum SeStatus se_runtime_new(const char *config_toml, int64_t start, struct SeRuntime **out);

/**
 * Moves the runtime clock to `t` seconds.
 *
 * # Safety
 * `handle` must come from [`se_runtime_new`].
 */
enum SeStatus se_runtime_set_time(struct SeRuntime *handle, int64_t t);

/**
 * Sends one API request. On `SE_STATUS_OK` the HTTP-style status is in
 * `out_status` and the JSON body in `out_json` (free with [`se_string_free`]).
 * `body` may be null for requests without one.
 *
 * # Safety
 * `handle` must come from [`se_runtime_new`]; strings NUL-terminated;
 * outputs writable.
 */
enum SeStatus se_runtime_api(struct SeRuntime *handle,
                             const char *method,
                             const char *path,
                             const char *body,
                             uint16_t *out_status,
                             char **out_json);

/**
 * # Safety
 * `handle` must be null or come from [`se_runtime_new`], freed once.
 */
void se_runtime_free(struct SeRuntime *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMARTENERGY_H */
