#ifndef QKDSIM_H
#define QKDSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum QkdStatus {
  QKD_STATUS_OK = 0,
  QKD_STATUS_NULL_POINTER = 1,
  QKD_STATUS_INVALID_ARGUMENT = 2,
  // A quantity is undefined for the inputs (e.g. all counts zero).
  QKD_STATUS_UNDEFINED = 3,
  QKD_STATUS_CORRECTION_FAILED = 4,
  QKD_STATUS_CONFIG = 5,
  QKD_STATUS_INSUFFICIENT_DATA = 6,
  QKD_STATUS_IO = 7,
  QKD_STATUS_PANIC = 8,
} QkdStatus;

// A seeded fiber channel trajectory.
typedef struct QkdChannel QkdChannel;

// System and security parameters.
typedef struct QkdSystem QkdSystem;

// Analytic gains and error rates at one channel loss, indexed signal, decoy, vacuum.
typedef struct QkdRateModel {
  double eta;
  double gain[3];
  double error_rate[3];
  double sifted_bps;
} QkdRateModel;

// Finite-key operating point at one channel loss.
typedef struct QkdKeyRate {
  double loss_db;
  double sifted_bps;
  double qber;
  double secure_bps;
  double key_bits_per_block;
  double phi1_upper;
} QkdKeyRate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Description of the last failure on this thread; empty after a success.
// The pointer stays valid until the next qkdsim call on the same thread.
const char *qkd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *qkd_version(void);

// Output intensities of the receiver for an input polarization given by the
// ellipse angles `theta`, `beta` and modulator phases `phi_a`, `phi_b`.
//
// # Safety
// `i1` and `i2` must be valid for writes.
enum QkdStatus qkd_smzi_intensities(double theta,
                                    double beta,
                                    double phi_a,
                                    double phi_b,
                                    double *i1,
                                    double *i2);

// Fringe visibility `(max - min) / (max + min)` of `n` detector counts.
//
// # Safety
// `counts` must point to `n` readable values; `out` must be valid for writes.
enum QkdStatus qkd_visibility(const uint64_t *counts, size_t n, double *out);

// Handle with the default system and security parameters.
struct QkdSystem *qkd_system_new_default(void);

// Parses a scenario config (JSON; only `system` and `security` are used)
// into a new handle stored in `*out`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for writes.
enum QkdStatus qkd_system_from_json(const char *json, struct QkdSystem **out);

// Releases a system handle; null is ignored.
//
// # Safety
// `system` must come from `qkd_system_new_default` or `qkd_system_from_json`
// and must not be used afterwards.
void qkd_system_free(struct QkdSystem *system);

// Analytic gains, error rates and signal sifted rate at `loss_db`.
//
// # Safety
// `system` must be a live handle; `out` must be valid for writes.
enum QkdStatus qkd_rate_model(const struct QkdSystem *system,
                              double loss_db,
                              struct QkdRateModel *out);

// Finite-key secure key rate at `loss_db` for the handle's block size.
//
// # Safety
// `system` must be a live handle; `out` must be valid for writes.
enum QkdStatus qkd_key_rate(const struct QkdSystem *system, double loss_db, struct QkdKeyRate *out);

// New channel trajectory stored in `*out`.
//
// # Safety
// `out` must be valid for writes.
enum QkdStatus qkd_channel_new(double loss_db,
                               double scramble_rate,
                               double phase_drift_sigma,
                               uint64_t seed,
                               struct QkdChannel **out);

// Releases a channel handle; null is ignored.
//
// # Safety
// `channel` must come from `qkd_channel_new` and must not be used afterwards.
void qkd_channel_free(struct QkdChannel *channel);

// Advances the channel by `dt` seconds.
//
// # Safety
// `channel` must be a live handle.
enum QkdStatus qkd_channel_advance(struct QkdChannel *channel, double dt);

// Current channel phase offset (rad) and elapsed time (s).
//
// # Safety
// `channel` must be a live handle; `phase` and `time` must be valid for writes.
enum QkdStatus qkd_channel_state(const struct QkdChannel *channel, double *phase, double *time);

// Receiver output intensities for light that left Alice with polarization
// `theta`, `beta` and crossed the channel in its current state. The channel
// phase offset is added to `phi_a`.
//
// # Safety
// `channel` must be a live handle; `i1` and `i2` must be valid for writes.
enum QkdStatus qkd_channel_intensities(const struct QkdChannel *channel,
                                       double theta,
                                       double beta,
                                       double phi_a,
                                       double phi_b,
                                       double *i1,
                                       double *i2);

// Toeplitz hash of `key` (`n` bits) with `n + out_len - 1` seed bits into `out`.
//
// # Safety
// `key`, `seed` and `out` must point to `n`, `seed_len` and `out_len` bytes.
enum QkdStatus qkd_toeplitz_hash(const uint8_t *key,
                                 size_t n,
                                 const uint8_t *seed,
                                 size_t seed_len,
                                 uint8_t *out,
                                 size_t out_len);

// Cascade reconciliation of `key_b` towards `key_a` (`n` bits each). Writes
// Bob's corrected key to `corrected` and the disclosed bit count to `leak_bits`.
//
// # Safety
// `key_a`, `key_b` and `corrected` must point to `n` bytes; `leak_bits` must
// be valid for writes.
enum QkdStatus qkd_cascade_correct(const uint8_t *key_a,
                                   const uint8_t *key_b,
                                   size_t n,
                                   double qber_estimate,
                                   uint64_t seed,
                                   uint8_t *corrected,
                                   uint64_t *leak_bits);

// Runs a scenario (`"visibility-scan"`, `"long-run"`, `"loss-sweep"` or
// `"postprocess-demo"`) with a JSON config and writes its reports to `out_dir`.
//
// # Safety
// All arguments must be NUL-terminated strings.
enum QkdStatus qkd_run_scenario(const char *scenario_name,
                                const char *config_json,
                                const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QKDSIM_H */
