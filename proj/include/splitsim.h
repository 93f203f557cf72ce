/* splitsim — split-inference simulator and RL split-point optimizer.
 *
 * C interface of the shared library. A session wraps one validated
 * experiment configuration; commands run the pipeline stages and hand back
 * a JSON summary string. All functions return ss_status; on failure,
 * ss_last_error() describes what went wrong (thread-local).
 */

#ifndef SPLITSIM_H
#define SPLITSIM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SS_API __declspec(dllexport)
#else
#define SS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ss_status {
    SS_OK = 0,
    SS_ERROR = 1,          /* invalid argument / unclassified failure */
    SS_MISSING_INPUT = 2,  /* referenced file or upstream artifact absent */
    SS_INVALID_CONFIG = 3, /* configuration failed validation */
    SS_RUNTIME = 4         /* training or evaluation failed at runtime */
} ss_status;

typedef struct ss_session ss_session; /* opaque */

SS_API const char* ss_version(void);

/* Thread-local message for the most recent failure in this thread. */
SS_API const char* ss_last_error(void);

/* Creates a session from a JSON config document (text). `overrides` holds
 * dot-keyed assignments like "reward.lambda=0.5"; pass NULL/0 for none. */
SS_API ss_status ss_session_open(const char* config_json, const char* const* overrides,
                                 size_t n_overrides, ss_session** out);

/* Same, reading the config from a file path. */
SS_API ss_status ss_session_open_file(const char* config_path,
                                      const char* const* overrides, size_t n_overrides,
                                      ss_session** out);

SS_API void ss_session_close(ss_session* session);

SS_API uint64_t ss_session_config_hash(const ss_session* session);

/* Pipeline commands. Each writes its artifacts plus a manifest under the
 * session's out_dir and stores a JSON summary retrievable below. */
SS_API ss_status ss_run_train_lm(ss_session* session);
SS_API ss_status ss_run_sweep(ss_session* session);
SS_API ss_status ss_run_collect(ss_session* session);
SS_API ss_status ss_run_fit_surrogate(ss_session* session);
SS_API ss_status ss_run_train_agent(ss_session* session);
SS_API ss_status ss_run_eval(ss_session* session);
SS_API ss_status ss_run_analyze(ss_session* session);

/* JSON summary of the most recent successful command in this session.
 * The pointer stays valid until the next command or session close. */
SS_API const char* ss_session_summary(const ss_session* session);

/* ------------------------------------------------------------------ */
/* Stateless numerics, usable without a session.                       */

/* P(h < h_th) under a Nakagami-m gain distribution. */
SS_API ss_status ss_packet_loss_prob(double m, double omega, double h_th, double* out);

/* Fading shape whose loss probability matches `target` (within 1e-6). */
SS_API ss_status ss_calibrate_m(double target, double omega, double h_th, double* out);

/* Noise std for a target SNR in dB at the given signal RMS. */
SS_API ss_status ss_snr_to_sigma(double snr_db, double signal_rms, double* out);

/* Per-layer FLOPs of the transformer cost model (exact integer). */
SS_API ss_status ss_flops_per_layer(uint32_t d_in, uint32_t d_mid, uint32_t heads,
                                    uint64_t* out);

/* Device-side load for a split at p: p * flops_per_layer. */
SS_API ss_status ss_c_ue(uint32_t d_in, uint32_t d_mid, uint32_t heads, uint32_t layers,
                         uint32_t p, uint64_t* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SPLITSIM_H */
