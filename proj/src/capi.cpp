#include <memory>
#include <vector>
#include "splitsim.h"

#include <string>

#include "splitsim/channel.hpp"
#include "splitsim/config.hpp"
#include "splitsim/errors.hpp"
#include "splitsim/pipeline.hpp"

using namespace splitsim;

struct ss_session {
    ExperimentConfig config;
    std::string summary;
};

namespace {

thread_local std::string g_last_error;

ss_status status_of(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::MissingInput:
            return SS_MISSING_INPUT;
        case ErrorKind::InvalidConfig:
            return SS_INVALID_CONFIG;
        case ErrorKind::Runtime:
        case ErrorKind::Accuracy:
        case ErrorKind::Unavailable:
        case ErrorKind::InvalidInput:  // malformed artifact discovered mid-run
            return SS_RUNTIME;
        default:
            return SS_ERROR;
    }
}

template <typename Fn>
ss_status guarded(Fn&& fn) {
    try {
        fn();
        return SS_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SS_ERROR;
    } catch (...) {
        g_last_error = "unknown error";
        return SS_ERROR;
    }
}

std::vector<std::string> to_overrides(const char* const* overrides, size_t n) {
    std::vector<std::string> out;
    for (size_t i = 0; overrides != nullptr && i < n; ++i)
        out.emplace_back(overrides[i]);
    return out;
}

ss_status run_command(ss_session* session, nlohmann::json (*command)(const ExperimentConfig&)) {
    if (session == nullptr) {
        g_last_error = "null session";
        return SS_ERROR;
    }
    return guarded([&] { session->summary = command(session->config).dump(); });
}

}  // namespace

extern "C" {

const char* ss_version(void) { return "0.1.0"; }

const char* ss_last_error(void) { return g_last_error.c_str(); }

ss_status ss_session_open(const char* config_json, const char* const* overrides,
                          size_t n_overrides, ss_session** out) {
    if (config_json == nullptr || out == nullptr) {
        g_last_error = "null argument";
        return SS_ERROR;
    }
    return guarded([&] {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(config_json);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorKind::InvalidConfig, std::string("config is not valid json: ") + e.what());
        }
        auto session = std::make_unique<ss_session>();
        session->config = parse_config(doc, to_overrides(overrides, n_overrides));
        *out = session.release();
    });
}

ss_status ss_session_open_file(const char* config_path, const char* const* overrides,
                               size_t n_overrides, ss_session** out) {
    if (config_path == nullptr || out == nullptr) {
        g_last_error = "null argument";
        return SS_ERROR;
    }
    return guarded([&] {
        auto session = std::make_unique<ss_session>();
        session->config = load_config_file(config_path, to_overrides(overrides, n_overrides));
        *out = session.release();
    });
}

void ss_session_close(ss_session* session) { delete session; }

uint64_t ss_session_config_hash(const ss_session* session) {
    return session ? config_hash(session->config) : 0;
}

ss_status ss_run_train_lm(ss_session* s) { return run_command(s, &run_train_lm); }
ss_status ss_run_sweep(ss_session* s) { return run_command(s, &run_sweep); }
ss_status ss_run_collect(ss_session* s) { return run_command(s, &run_collect); }
ss_status ss_run_fit_surrogate(ss_session* s) { return run_command(s, &run_fit_surrogate); }
ss_status ss_run_train_agent(ss_session* s) { return run_command(s, &run_train_agent); }
ss_status ss_run_eval(ss_session* s) { return run_command(s, &run_eval); }
ss_status ss_run_analyze(ss_session* s) { return run_command(s, &run_analyze); }

const char* ss_session_summary(const ss_session* session) {
    return session ? session->summary.c_str() : "";
}

ss_status ss_packet_loss_prob(double m, double omega, double h_th, double* out) {
    if (out == nullptr) {
        g_last_error = "null output";
        return SS_ERROR;
    }
    return guarded([&] { *out = packet_loss_prob(m, omega, h_th); });
}

ss_status ss_calibrate_m(double target, double omega, double h_th, double* out) {
    if (out == nullptr) {
        g_last_error = "null output";
        return SS_ERROR;
    }
    return guarded([&] { *out = calibrate_m(target, omega, h_th); });
}

ss_status ss_snr_to_sigma(double snr_db, double signal_rms, double* out) {
    if (out == nullptr) {
        g_last_error = "null output";
        return SS_ERROR;
    }
    return guarded([&] { *out = snr_to_sigma(snr_db, signal_rms); });
}

ss_status ss_flops_per_layer(uint32_t d_in, uint32_t d_mid, uint32_t heads, uint64_t* out) {
    if (out == nullptr) {
        g_last_error = "null output";
        return SS_ERROR;
    }
    return guarded([&] {
        LmConfig cfg;
        cfg.layers = 2;
        cfg.d_in = d_in;
        cfg.d_mid = d_mid;
        cfg.heads = heads;
        cfg.d_ff = 1;
        cfg.vocab = 1;
        *out = flops_per_layer(cfg);
    });
}

ss_status ss_c_ue(uint32_t d_in, uint32_t d_mid, uint32_t heads, uint32_t layers,
                  uint32_t p, uint64_t* out) {
    if (out == nullptr) {
        g_last_error = "null output";
        return SS_ERROR;
    }
    return guarded([&] {
        LmConfig cfg;
        cfg.layers = layers;
        cfg.d_in = d_in;
        cfg.d_mid = d_mid;
        cfg.heads = heads;
        cfg.d_ff = 1;
        cfg.vocab = 1;
        *out = c_ue(cfg, p);
    });
}

}  // extern "C"
