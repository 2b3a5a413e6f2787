#include "persam/model.hpp"

#include "persam/errors.hpp"

namespace persam {

std::vector<double> onehot(int label, std::size_t classes) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
        throw IndexError("label " + std::to_string(label) + " out of range [0," +
                         std::to_string(classes) + ")");
    std::vector<double> y(classes, 0.0);
    y[label] = 1.0;
    return y;
}

PersamModel::PersamModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    encoder_ = MultimodalEncoder(store_, cfg_, rng);
    aggregator_ = MultimodalAggregator(store_, cfg_, rng);
    loss_cfg_.clamp_lo = cfg_.noisy_or_floor;
    loss_cfg_.mode = cfg_.noisy_or_mode;
}

PersamForward PersamModel::forward(const Bag& bag, Rng& rng, bool training) const {
    PersamForward f;
    f.enc = encoder_.encode_bag(bag.patches, bag.factors, rng, training);
    f.proj = aggregator_.project(f.enc.encoded);
    f.attn = aggregator_.attentions(f.proj);
    f.aggregated = aggregator_.aggregate(f.attn.explanatory, f.proj.patch_values);
    f.probs = aggregator_.classify(f.aggregated);
    f.pis = noisy_or_per_class(f.attn.explanatory, loss_cfg_);
    return f;
}

Tensor PersamModel::predict(const Bag& bag, Rng& rng, bool training) {
    return forward(bag, rng, training).probs;
}

Tensor PersamModel::loss(const Bag& bag, Rng& rng, bool training) {
    PersamForward f = forward(bag, rng, training);
    return total_loss(f.probs, onehot(bag.label, cfg_.num_classes), f.pis, loss_cfg_);
}

std::vector<double> PersamModel::patch_salience(const Bag& bag) {
    Rng rng(0);
    PersamForward f = forward(bag, rng, /*training=*/false);
    Tensor per_patch = max_rows(f.attn.explanatory);
    return per_patch.data();
}

}  // namespace persam
