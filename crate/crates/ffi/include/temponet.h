#ifndef TEMPONET_H
#define TEMPONET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TpnStatus {
  TPN_STATUS_OK = 0,
  TPN_STATUS_NULL_POINTER = 1,
  TPN_STATUS_INVALID_ARGUMENT = 2,
  TPN_STATUS_DATA_ERROR = 3,
  TPN_STATUS_NUMERIC_ERROR = 4,
  TPN_STATUS_PANIC = 5,
} TpnStatus;

/**
 * Values accepted wherever a model kind is passed as `uint32_t`.
 */
typedef enum TpnModelKind {
  TPN_MODEL_KIND_TEMPONET = 0,
  TPN_MODEL_KIND_VANILLA_TRANSFORMER = 1,
  TPN_MODEL_KIND_DLINEAR = 2,
  TPN_MODEL_KIND_NLINEAR = 3,
  TPN_MODEL_KIND_PERSISTENCE = 4,
} TpnModelKind;

/**
 * Opaque model handle.
 */
typedef struct TpnModel TpnModel;

/**
 * Architecture settings; fill with [`tpn_config_default`] and adjust.
 */
typedef struct TpnConfig {
  size_t d_model;
  size_t heads;
  size_t d_ff;
  size_t n_enc;
  size_t n_dec;
  size_t n_temporal_blocks;
  size_t in_channels;
  size_t time_features;
  size_t lookback;
  size_t horizon;
  size_t label_len;
  size_t moving_avg;
  double dropout;
} TpnConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Writes the default architecture into `*out`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `TpnConfig`.
 */
enum TpnStatus tpn_config_default(struct TpnConfig *out);

/**
 * Creates a freshly initialized model of `kind` (a [`TpnModelKind`] value).
 *
 * # Safety
 * `config` must be null or point to a valid `TpnConfig`; `out` must be null
 * or writable.
 */
enum TpnStatus tpn_model_new(uint32_t kind,
                             const struct TpnConfig *config,
                             uint64_t seed,
                             struct TpnModel **out);

/**
 * Loads a checkpoint written by [`tpn_model_save`] or the command line.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be null or writable.
 */
enum TpnStatus tpn_model_load(const char *path, struct TpnModel **out);

/**
 * # Safety
 * `model` must be null or a live handle; `path` a NUL-terminated string.
 */
enum TpnStatus tpn_model_save(const struct TpnModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tpn_model_free(struct TpnModel *model);

/**
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum TpnStatus tpn_model_param_count(const struct TpnModel *model, size_t *out);

/**
 * Writes the model's kind (a [`TpnModelKind`] value) and architecture.
 *
 * # Safety
 * `model` must be null or a live handle; `kind` and `config` null or writable.
 */
enum TpnStatus tpn_model_describe(const struct TpnModel *model,
                                  uint32_t *kind,
                                  struct TpnConfig *config);

/**
 * Forecasts `batch` windows. Row-major inputs:
 * `enc_in` is `[batch, lookback, in_channels]`,
 * `dec_in` is `[batch, label_len + horizon, in_channels]` with zeroed
 * placeholder rows, `past_target` is `[batch, lookback]`, and the optional
 * marks are `[batch, lookback, time_features]` and
 * `[batch, label_len + horizon, time_features]`. `out` receives
 * `[batch, horizon]` values and `out_len` must equal that size.
 *
 * # Safety
 * Every non-null pointer must be valid for the sizes above.
 */
enum TpnStatus tpn_model_predict(const struct TpnModel *model,
                                 size_t batch,
                                 const double *enc_in,
                                 const double *dec_in,
                                 const double *past_target,
                                 const double *enc_mark,
                                 const double *dec_mark,
                                 double *out,
                                 size_t out_len);

/**
 * `100 * (other - reference) / reference`.
 *
 * # Safety
 * `out` must be null or writable.
 */
enum TpnStatus tpn_relative_improvement(double other, double reference, double *out);

/**
 * Description of the last failure on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *tpn_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEMPONET_H */
