#ifndef NPUSIM_H
#define NPUSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum NpuStatus {
  NPU_STATUS_OK = 0,
  NPU_STATUS_NULL_POINTER = 1,
  NPU_STATUS_INVALID_ARGUMENT = 2,
  NPU_STATUS_PARSE = 3,
  NPU_STATUS_MODEL = 4,
  NPU_STATUS_ENGINE = 5,
  NPU_STATUS_BUFFER_TOO_SMALL = 6,
  NPU_STATUS_PANIC = 7,
} NpuStatus;

// Which engine a handle runs.
typedef enum NpuEngineKind {
  // Dense timestep engine in real arithmetic.
  NPU_ENGINE_KIND_DENSE_REAL = 0,
  // Dense timestep engine in fixed point.
  NPU_ENGINE_KIND_DENSE_FIXED = 1,
  // Event-driven pipeline (fixed point).
  NPU_ENGINE_KIND_EVENT = 2,
} NpuEngineKind;

// Opaque engine handle with its own membrane state.
typedef struct NpuEngine NpuEngine;

// Opaque network handle.
typedef struct NpuModel NpuModel;

typedef struct NpuModelStats {
  uint64_t inputs;
  uint64_t synapses;
  uint64_t kernels;
  uint64_t neurons;
  uint64_t layers;
  uint64_t timesteps;
} NpuModelStats;

typedef struct NpuShape {
  size_t channels;
  size_t height;
  size_t width;
} NpuShape;

typedef struct NpuEnergy {
  double energy_per_output_j;
  double energy_per_spike_j;
  double energy_per_synapse_j;
  double energy_norm_j;
  double kernel_computation_index;
} NpuEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *npu_last_error(void);

// Library version as a NUL-terminated string.
const char *npu_version(void);

// Parses a NUL-terminated text configuration. Weights start at zero.
//
// # Safety
// `text` must be a valid C string and `out` a writable pointer.
enum NpuStatus npu_model_from_config(const char *text, struct NpuModel **out);

// Reads a binary model file image.
//
// # Safety
// `data` must point to `len` readable bytes and `out` be writable.
enum NpuStatus npu_model_load(const uint8_t *data, size_t len, struct NpuModel **out);

// Serializes the model. `*len` is set to the required size; when `cap` is
// too small nothing is written and `NPU_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `model` must be a live handle, `buf` writable for `cap` bytes (or null
// with `cap == 0`) and `len` writable.
enum NpuStatus npu_model_save(const struct NpuModel *model, uint8_t *buf, size_t cap, size_t *len);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void npu_model_free(struct NpuModel *model);

// # Safety
// `model` must be a live handle and `out` writable.
enum NpuStatus npu_model_stats(const struct NpuModel *model, struct NpuModelStats *out);

// Input shape, or with `layer >= 0` the output shape of that layer.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum NpuStatus npu_model_shape(const struct NpuModel *model, int64_t layer, struct NpuShape *out);

// Replaces all weights with seeded uniform values.
//
// # Safety
// `model` must be a live handle.
enum NpuStatus npu_model_randomize(struct NpuModel *model, uint64_t seed);

// Rescales real weights so about `target` of each layer's neurons fire on
// `probe`, a binary input frame of `len` bytes in `(channel, y, x)` order.
//
// # Safety
// `model` must be a live handle and `probe` readable for `len` bytes.
enum NpuStatus npu_model_calibrate(struct NpuModel *model,
                                   const uint8_t *probe,
                                   size_t len,
                                   double target);

// Fuses batch norms and converts the model to fixed point in place.
// `saturated` (optional) receives the number of clamped parameters.
//
// # Safety
// `model` must be a live handle; `saturated` may be null.
enum NpuStatus npu_model_quantize(struct NpuModel *model, uint64_t *saturated);

// Creates an engine with zeroed membranes. The model may be freed afterwards.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum NpuStatus npu_engine_new(const struct NpuModel *model,
                              enum NpuEngineKind kind,
                              struct NpuEngine **out);

// Advances one timestep on a dense input frame of `len` values in
// `(channel, y, x)` order. The event engine takes binary frames only.
// Per-layer spike counts go to `counts` (may be null), which must hold
// `counts_len >= layers` entries.
//
// # Safety
// `engine` must be a live handle, `input` readable for `len` bytes and
// `counts` writable for `counts_len` entries.
enum NpuStatus npu_engine_step(struct NpuEngine *engine,
                               const uint8_t *input,
                               size_t len,
                               uint64_t *counts,
                               size_t counts_len);

// Writes the last step's binary output map of `layer` (one byte per
// neuron, `(channel, y, x)` order) into `buf`.
//
// # Safety
// `engine` must be a live handle and `buf` writable for `len` bytes.
enum NpuStatus npu_engine_output(const struct NpuEngine *engine,
                                 size_t layer,
                                 uint8_t *buf,
                                 size_t len);

// Zeroes every membrane potential and the timestep counter.
//
// # Safety
// `engine` must be a live handle.
enum NpuStatus npu_engine_reset(struct NpuEngine *engine);

// Releases an engine. Null is ignored.
//
// # Safety
// `engine` must come from this library and not be used afterwards.
void npu_engine_free(struct NpuEngine *engine);

// `spikes / (neurons * timesteps) * 100`; 0 when either count is 0.
double npu_activity_percent(uint64_t spikes, uint64_t neurons, uint64_t timesteps);

// Energy figures of one inference.
//
// # Safety
// `out` must be writable.
enum NpuStatus npu_energy(double latency_s,
                          double power_w,
                          uint64_t synapses,
                          uint64_t kernels,
                          uint64_t spikes,
                          uint64_t timesteps,
                          struct NpuEnergy *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NPUSIM_H */
