#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "persam/aggregator.hpp"
#include "persam/config.hpp"
#include "persam/encoder.hpp"
#include "persam/loss.hpp"
#include "persam/params.hpp"
#include "persam/tensor.hpp"

namespace persam {

// One training/evaluation unit: L patch tensors ({ch, S, S} each), M raw
// clinical factor vectors, and the bag label. The evidence mask is generator
// ground truth used only by metrics, never by models.
struct Bag {
    std::vector<Tensor> patches;
    std::vector<std::vector<double>> factors;
    int label = 0;
    std::vector<bool> evidence;
    int case_id = -1;
    bool atypical = false;
};

std::vector<double> onehot(int label, std::size_t classes);

// Common surface shared by the proposed model and every baseline.
class BagModel {
public:
    virtual ~BagModel() = default;
    virtual const std::string& name() const = 0;
    virtual const ModelConfig& config() const = 0;
    virtual ParameterStore& params() = 0;
    const ParameterStore& params() const { return const_cast<BagModel*>(this)->params(); }

    // {1, C} class probabilities.
    virtual Tensor predict(const Bag& bag, Rng& rng, bool training) = 0;
    // Scalar training objective (graph attached).
    virtual Tensor loss(const Bag& bag, Rng& rng, bool training) = 0;
    // Per-patch salience for attention-quality metrics; throws
    // UnsupportedOperationError where the architecture defines none.
    virtual std::vector<double> patch_salience(const Bag& bag) = 0;
};

// Everything one forward pass of the proposed model produces.
struct PersamForward {
    EncodeResult enc;
    Projections proj;
    AttentionTriple attn;
    Tensor aggregated;       // z, {1, R}
    Tensor probs;            // {1, C}
    std::vector<Tensor> pis; // noisy-OR per class
};

// Transformer over patch + clinical + class tokens, multimodal aggregator,
// classifier, and the two-part bag objective.
class PersamModel : public BagModel {
public:
    PersamModel(const ModelConfig& cfg, std::uint64_t seed);

    const std::string& name() const override { return name_; }
    const ModelConfig& config() const override { return cfg_; }
    ParameterStore& params() override { return store_; }

    PersamForward forward(const Bag& bag, Rng& rng, bool training) const;

    Tensor predict(const Bag& bag, Rng& rng, bool training) override;
    Tensor loss(const Bag& bag, Rng& rng, bool training) override;
    std::vector<double> patch_salience(const Bag& bag) override;

    const MultimodalEncoder& encoder() const { return encoder_; }
    const MultimodalAggregator& aggregator() const { return aggregator_; }
    const LossConfig& loss_config() const { return loss_cfg_; }

private:
    std::string name_ = "persam";
    ModelConfig cfg_;
    ParameterStore store_;
    MultimodalEncoder encoder_;
    MultimodalAggregator aggregator_;
    LossConfig loss_cfg_;
};

}  // namespace persam
