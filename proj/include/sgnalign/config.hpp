#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "error.hpp"

namespace sgnalign {

/// Every tunable of the pipeline. Field names double as the `config.json` keys.
///
/// Learning rates and epoch counts default to the published schedule
/// (7/4/100 epochs at 1e-5 / 5e-6 / 5e-6). Those rates assume a very large
/// corpus; the desk-scale recipe in desk_recipe() raises them.
struct RunConfig {
    int d_model = 64;
    int d_ff = 128;
    int n_heads = 4;
    int n_layers = 2;
    int vocab_buckets = 4096;
    int feature_dim = 16;

    double window_seconds = 20.0;
    int stride = 4;
    double prior_shift_s = 2.7;
    double prior_pad_s = 3.2;

    double tau = 0.5;
    double tau_c = 0.0;
    double lambda_neg = 1.0;
    double lambda_rel = 1.0;
    double dtw_theta = 0.4;

    std::uint64_t seed = 0;
    int batch_size = 16;
    double grad_clip = 5.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    double lr_word = 1e-5;
    double lr_subtitle = 5e-6;
    double lr_finetune = 5e-6;
    int epochs_word = 7;
    int epochs_subtitle = 4;
    int epochs_finetune = 100;
    bool freeze_text_stack = true;
    int selftrain_rounds = 1;

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0)) throw ConfigError(std::string(name) + " must be positive");
        };
        auto unit = [](double v, const char* name) {
            if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
        };
        positive(d_model, "d_model");
        positive(d_ff, "d_ff");
        positive(n_heads, "n_heads");
        positive(n_layers, "n_layers");
        positive(feature_dim, "feature_dim");
        positive(window_seconds, "window_seconds");
        positive(stride, "stride");
        positive(batch_size, "batch_size");
        positive(grad_clip, "grad_clip");
        positive(adam_eps, "adam_eps");
        if (vocab_buckets < 3) throw ConfigError("vocab_buckets must be at least 3");
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (prior_pad_s < 0) throw ConfigError("prior_pad_s must be non-negative");
        if (lambda_neg < 0 || lambda_rel < 0) throw ConfigError("loss weights must be non-negative");
        if (lr_word < 0 || lr_subtitle < 0 || lr_finetune < 0) throw ConfigError("learning rates must be non-negative");
        if (epochs_word < 0 || epochs_subtitle < 0 || epochs_finetune < 0) throw ConfigError("epochs must be non-negative");
        if (selftrain_rounds < 0) throw ConfigError("selftrain_rounds must be non-negative");
        unit(tau, "tau");
        unit(tau_c, "tau_c");
        unit(dtw_theta, "dtw_theta");
        unit(adam_beta1, "adam_beta1");
        unit(adam_beta2, "adam_beta2");
    }

    // Number of stride-grid frames in one search window.
    int window_frames(double fps) const {
        return static_cast<int>(std::floor(window_seconds * fps / stride + 1e-9));
    }
};

#define SGNALIGN_CONFIG_FIELDS(X)                                                     \
    X(d_model) X(d_ff) X(n_heads) X(n_layers) X(vocab_buckets) X(feature_dim)         \
    X(window_seconds) X(stride) X(prior_shift_s) X(prior_pad_s) X(tau) X(tau_c)       \
    X(lambda_neg) X(lambda_rel) X(dtw_theta) X(seed) X(batch_size) X(grad_clip)       \
    X(adam_beta1) X(adam_beta2) X(adam_eps) X(lr_word) X(lr_subtitle) X(lr_finetune)  \
    X(epochs_word) X(epochs_subtitle) X(epochs_finetune) X(freeze_text_stack)         \
    X(selftrain_rounds)

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
#define X(name) j[#name] = c.name;
    SGNALIGN_CONFIG_FIELDS(X)
#undef X
    return j;
}

// Missing keys keep their defaults; unknown keys are rejected so typos surface.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
#define X(name)                                                                        \
    if (key == #name) {                                                                \
        try {                                                                          \
            base.name = value.get<decltype(base.name)>();                              \
        } catch (const nlohmann::json::exception& e) {                                 \
            throw ConfigError("config field '" #name "': " + std::string(e.what()));   \
        }                                                                              \
        known = true;                                                                  \
    }
        SGNALIGN_CONFIG_FIELDS(X)
#undef X
        if (!known) throw ConfigError("unknown config field '" + key + "'");
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j, base);
}

/// Settings used by the bundled synthetic recipe: smaller model and batch,
/// larger learning rates, longer word pre-training. Everything else keeps
/// defaults.
inline RunConfig desk_recipe() {
    RunConfig c;
    c.d_model = 32;
    c.d_ff = 64;
    c.batch_size = 8;
    c.lr_word = 2e-3;
    c.lr_subtitle = 1e-3;
    c.lr_finetune = 5e-4;
    c.epochs_word = 15;
    c.epochs_subtitle = 4;
    c.epochs_finetune = 100;
    return c;
}

} // namespace sgnalign
