#ifndef TRYON_H
#define TRYON_H

#include <stdint.h>
#include <stddef.h>

// Result code of every call.
typedef enum TryonStatus {
  TRYON_STATUS_OK = 0,
  // bad arguments or unreadable input data
  TRYON_STATUS_INVALID_INPUT = 1,
  // bad configuration, unknown garment, unloadable catalog
  TRYON_STATUS_CONFIG = 2,
  // a perception backend is missing or failed
  TRYON_STATUS_BACKEND = 3,
  // a required pointer was null
  TRYON_STATUS_NULL_POINTER = 4,
  // caller-supplied buffer too small
  TRYON_STATUS_BUFFER_TOO_SMALL = 5,
  // internal panic; the handle should be discarded
  TRYON_STATUS_INTERNAL = 6,
} TryonStatus;

// Opaque engine handle.
typedef struct TryonEngine TryonEngine;

// Per-frame outcome filled by [`tryon_engine_process_rgb8`].
typedef struct TryonFrameInfo {
  uint64_t frame_id;
  // 1 when the frame was returned unchanged
  uint8_t passthrough;
  double pose_ms;
  double densepose_ms;
  double gs_ms;
  double composite_ms;
} TryonFrameInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tryon_version(void);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *tryon_last_error(void);

// Open an engine over a catalog directory. `config_json` may be null or a
// JSON object with optional `engine` and `perception` sections.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum TryonStatus tryon_engine_open(const char *catalog_dir,
                                   const char *config_json,
                                   struct TryonEngine **out);

// Open an engine with a single garment loaded from a checkpoint file; the
// garment id is the file stem.
//
// # Safety
// As [`tryon_engine_open`].
enum TryonStatus tryon_engine_open_checkpoint(const char *checkpoint,
                                              const char *config_json,
                                              struct TryonEngine **out);

// Release an engine. Null is ignored.
//
// # Safety
// `engine` must come from an open call and not be used afterwards.
void tryon_engine_free(struct TryonEngine *engine);

// Number of garments in the catalog.
//
// # Safety
// `engine` must be a live handle; `count` writable.
enum TryonStatus tryon_engine_garment_count(const struct TryonEngine *engine, size_t *count);

// Copy the id of garment `index` into `buf` (NUL-terminated).
//
// # Safety
// `engine` must be live; `buf` must hold `buf_len` bytes.
enum TryonStatus tryon_engine_garment_id(const struct TryonEngine *engine,
                                         size_t index,
                                         char *buf,
                                         size_t buf_len);

// Copy the selected garment id into `buf`.
//
// # Safety
// As [`tryon_engine_garment_id`].
enum TryonStatus tryon_engine_selected(const struct TryonEngine *engine, char *buf, size_t buf_len);

// Switch garments; applies from the next processed frame.
//
// # Safety
// `engine` live, `garment_id` NUL-terminated.
enum TryonStatus tryon_engine_select(const struct TryonEngine *engine, const char *garment_id);

// Run try-on on one RGB8 frame. `rgb_out` receives the composited frame
// and may alias `rgb_in`; both hold `width * height * 3` bytes. `info` may
// be null.
//
// # Safety
// Buffers must be valid for the stated sizes; `engine` must be live.
enum TryonStatus tryon_engine_process_rgb8(const struct TryonEngine *engine,
                                           uint64_t frame_id,
                                           uint32_t width,
                                           uint32_t height,
                                           const uint8_t *rgb_in,
                                           uint8_t *rgb_out,
                                           struct TryonFrameInfo *info);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRYON_H */
