#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "persam/errors.hpp"

namespace persam {

enum class NoisyOrMode {
    kRescale,   // map each factor 1-a' affinely onto [floor, 1]
    kClampMax,  // max(1-a', floor)
};

// Widths and counts for every network in the project. The paper-scale values
// are the defaults; desk() shrinks everything so the full pipeline trains in
// seconds-to-minutes on a CPU; tiny() is the gradient-check configuration.
struct ModelConfig {
    std::size_t feature_dim = 512;  // token width R
    std::size_t bag_size = 100;     // patches per bag L
    std::size_t num_factors = 2;    // clinical factors M
    std::size_t num_classes = 3;    // C
    std::size_t layers = 2;
    std::size_t heads = 8;
    double dropout = 0.1;
    std::vector<std::size_t> factor_dims = {18, 10};

    std::size_t patch_size = 16;
    std::size_t patch_channels = 3;
    std::size_t conv_channels1 = 8;
    std::size_t conv_channels2 = 16;

    std::size_t clinical_hidden = 256;
    std::size_t classifier_hidden = 256;
    std::size_t ffn_multiplier = 4;
    std::size_t mil_attention_hidden = 128;
    std::size_t mil_classifier_hidden = 256;
    bool mil_gated_attention = false;

    // The relevance logits are raw inner products by default; the scaled
    // variant divides by sqrt(R).
    bool scale_relevance_logits = false;
    NoisyOrMode noisy_or_mode = NoisyOrMode::kRescale;
    double noisy_or_floor = 0.95;

    std::size_t token_count() const { return bag_size + num_factors + num_classes; }

    void validate() const {
        if (feature_dim == 0 || bag_size == 0 || num_factors == 0 || num_classes == 0)
            throw ConfigError("config: R, L, M, C must all be >= 1");
        if (heads == 0 || feature_dim % heads != 0)
            throw ConfigError("config: feature_dim " + std::to_string(feature_dim) +
                              " must be divisible by heads " + std::to_string(heads));
        if (factor_dims.size() != num_factors)
            throw ConfigError("config: factor_dims has " +
                              std::to_string(factor_dims.size()) + " entries, expected " +
                              std::to_string(num_factors));
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("config: dropout must be in [0, 1)");
        if (noisy_or_floor <= 0.0 || noisy_or_floor >= 1.0)
            throw ConfigError("config: noisy_or_floor must be in (0, 1)");
    }

    static ModelConfig paper() { return ModelConfig{}; }

    static ModelConfig desk() {
        ModelConfig c;
        c.feature_dim = 32;
        c.bag_size = 12;
        c.clinical_hidden = 16;
        c.classifier_hidden = 16;
        c.mil_attention_hidden = 128;
        c.mil_classifier_hidden = 16;
        return c;
    }

    static ModelConfig tiny() {
        ModelConfig c = desk();
        c.feature_dim = 8;
        c.bag_size = 6;
        c.clinical_hidden = 8;
        c.classifier_hidden = 4;
        c.conv_channels1 = 4;
        c.conv_channels2 = 8;
        c.mil_attention_hidden = 8;
        c.mil_classifier_hidden = 4;
        return c;
    }

    static ModelConfig preset(const std::string& name) {
        if (name == "paper") return paper();
        if (name == "desk") return desk();
        if (name == "tiny") return tiny();
        throw ConfigError("unknown config preset '" + name + "'");
    }
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Width-scaled truncated-normal std for transformer/aggregator weights and
// class tokens: 0.02 at the paper width, growing like 1/sqrt(R) below it so
// the attention and feed-forward branches keep a usable share of the
// LN-normalized residual stream at small widths.
inline double transformer_init_std(const ModelConfig& cfg) {
    return 0.02 * std::sqrt(512.0 / static_cast<double>(cfg.feature_dim));
}

}  // namespace persam
