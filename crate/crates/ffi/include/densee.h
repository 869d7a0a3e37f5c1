#ifndef DENSEE_H
#define DENSEE_H

#include <stddef.h>
#include <stdint.h>

typedef enum DenseeStatus {
  DENSEE_STATUS_OK = 0,
  DENSEE_STATUS_NULL_POINTER = 1,
  DENSEE_STATUS_INVALID_ARGUMENT = 2,
  DENSEE_STATUS_DIMENSION_MISMATCH = 3,
  DENSEE_STATUS_IO = 4,
  DENSEE_STATUS_FORMAT = 5,
  DENSEE_STATUS_FINGERPRINT_MISMATCH = 6,
  DENSEE_STATUS_INTERNAL = 7,
} DenseeStatus;

// Loaded model with the shearlet system it was trained for.
typedef struct DenseeModelHandle DenseeModelHandle;

// Shearlet system for square images.
typedef struct DenseeShearletHandle DenseeShearletHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call on the same thread.
const char *densee_last_error(void);

// Library version as a static NUL-terminated string.
const char *densee_version(void);

// Load a model file written by `densee train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DenseeStatus densee_model_load(const char *path, struct DenseeModelHandle **out);

// # Safety
// `model` must come from [`densee_model_load`] and not be used afterwards.
void densee_model_free(struct DenseeModelHandle *model);

// Input shape the model expects.
//
// # Safety
// All pointers must be valid.
enum DenseeStatus densee_model_shape(const struct DenseeModelHandle *model,
                                     size_t *rows,
                                     size_t *cols);

// Number of trained heads, written to `count`.
//
// # Safety
// All pointers must be valid.
enum DenseeStatus densee_model_trained_heads(const struct DenseeModelHandle *model, size_t *count);

// Extract the wavefront set of a `rows × cols` image into `mask`
// (`rows · cols · 180` bytes).
//
// # Safety
// `image` must hold `rows · cols` doubles and `mask` `mask_len` bytes.
enum DenseeStatus densee_extract(const struct DenseeModelHandle *model,
                                 const double *image,
                                 size_t rows,
                                 size_t cols,
                                 double threshold,
                                 uint8_t *mask,
                                 size_t mask_len);

// Standard shearlet system for `m × m` images.
//
// # Safety
// `out` must be a valid pointer.
enum DenseeStatus densee_shearlet_new(size_t m, struct DenseeShearletHandle **out);

// # Safety
// `system` must come from [`densee_shearlet_new`] and not be used afterwards.
void densee_shearlet_free(struct DenseeShearletHandle *system);

// # Safety
// All pointers must be valid.
enum DenseeStatus densee_shearlet_channels(const struct DenseeShearletHandle *system,
                                           size_t *count);

// Shearlet coefficients of an `m × m` image, channel-major into `out`
// (`channels · m · m` doubles).
//
// # Safety
// `image` must hold `image_len` doubles and `out` `out_len` doubles.
enum DenseeStatus densee_shearlet_transform(const struct DenseeShearletHandle *system,
                                            const double *image,
                                            size_t image_len,
                                            double *out,
                                            size_t out_len);

// Canonical map of an `n × n` mask into an `n × 180` sinogram mask.
//
// # Safety
// `mask` must hold `n · n · 180` bytes and `out` `n · 180 · 180` bytes.
enum DenseeStatus densee_canonical_map(const uint8_t *mask, size_t n, uint8_t *out);

// Inverse canonical map after widening by `dilate` λ bins.
//
// # Safety
// `mask` must hold `n · 180 · 180` bytes and `out` `n · n · 180` bytes.
enum DenseeStatus densee_inverse_canonical_map(const uint8_t *mask,
                                               size_t n,
                                               size_t dilate,
                                               uint8_t *out);

// Corner pixels of a mask as `(row, col)` pairs in `pixels` (`2 · capacity`
// entries). `count` receives the total, which may exceed `capacity`.
//
// # Safety
// `mask` must hold `rows · cols · 180` bytes; `pixels` may be null when
// `capacity` is 0.
enum DenseeStatus densee_detect_corners(const uint8_t *mask,
                                        size_t rows,
                                        size_t cols,
                                        uint32_t *pixels,
                                        size_t capacity,
                                        size_t *count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSEE_H */
