#pragma once

#include <memory>
#include <string>

#include "persam/model.hpp"

namespace persam {

// The five comparison models. Every kind shares the BagModel train/evaluate
// surface with the proposed model.
enum class BaselineKind {
    kClinicalMlp,
    kImgMil,
    kImgClinicalMil,
    kImgTransformer,
    kImgClinicalTransformer,
};

const char* baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);  // throws ConfigError

std::unique_ptr<BagModel> build_baseline(BaselineKind kind, const ModelConfig& cfg,
                                         std::uint64_t seed);

// "persam" or any baseline name.
std::unique_ptr<BagModel> build_model(const std::string& name, const ModelConfig& cfg,
                                      std::uint64_t seed);

// Per-patch salience where the architecture defines one; clinical MLP throws
// UnsupportedOperationError.
std::vector<double> baseline_attention(BagModel& model, const Bag& bag);

}  // namespace persam
