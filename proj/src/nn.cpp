#include "persam/nn.hpp"

#include <cmath>

namespace persam {

std::vector<double> he_normal(std::size_t fan_in, std::size_t n, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, std);
    return v;
}

std::vector<double> xavier_normal(std::size_t fan_in, std::size_t fan_out, std::size_t n,
                                  Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, std);
    return v;
}

std::vector<double> trunc_normal(std::size_t n, double stddev, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.truncated_normal(stddev);
    return v;
}

Linear::Linear(ParameterStore& store, const std::string& name, ParamGroup group,
               std::size_t in, std::size_t out, Rng& rng, double weight_std) {
    std::vector<double> w = weight_std > 0.0 ? trunc_normal(in * out, weight_std, rng)
                                             : he_normal(in, in * out, rng);
    w_ = store.add(name + ".w", group, {in, out}, std::move(w));
    b_ = store.add(name + ".b", group, {1, out}, std::vector<double>(out, 0.0));
}

PatchExtractor::PatchExtractor(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
    : patch_size_(cfg.patch_size), patch_channels_(cfg.patch_channels) {
    const std::size_t c0 = cfg.patch_channels, c1 = cfg.conv_channels1,
                      c2 = cfg.conv_channels2;
    conv1_w_ = store.add("f.conv1.w", ParamGroup::kExtractor, {c1, c0, 3, 3},
                         he_normal(c0 * 9, c1 * c0 * 9, rng));
    conv1_b_ =
        store.add("f.conv1.b", ParamGroup::kExtractor, {c1}, std::vector<double>(c1, 0.0));
    conv2_w_ = store.add("f.conv2.w", ParamGroup::kExtractor, {c2, c1, 3, 3},
                         he_normal(c1 * 9, c2 * c1 * 9, rng));
    conv2_b_ =
        store.add("f.conv2.b", ParamGroup::kExtractor, {c2}, std::vector<double>(c2, 0.0));
    proj_ = Linear(store, "f.proj", ParamGroup::kExtractor, c2, cfg.feature_dim, rng);
}

Tensor PatchExtractor::forward(const Tensor& patch) const {
    if (patch.shape().size() != 3 || patch.shape()[0] != patch_channels_ ||
        patch.shape()[1] != patch_size_ || patch.shape()[2] != patch_size_)
        throw ShapeError("patch extractor expects {" + std::to_string(patch_channels_) +
                         "," + std::to_string(patch_size_) + "," +
                         std::to_string(patch_size_) + "}, got " + shape_str(patch.shape()));
    Tensor h = relu(conv2d(patch, conv1_w_, conv1_b_, 2, 1));
    h = relu(conv2d(h, conv2_w_, conv2_b_, 2, 1));
    return proj_.forward(global_avg_pool(h));
}

ClinicalEmbedder::ClinicalEmbedder(ParameterStore& store, const ModelConfig& cfg, Rng& rng,
                                   ParamGroup group)
    : dims_(cfg.factor_dims) {
    for (std::size_t m = 0; m < dims_.size(); ++m) {
        const std::string base = "g." + std::to_string(m);
        fc1_.push_back(Linear(store, base + ".fc1", group, dims_[m], cfg.clinical_hidden, rng));
        fc2_.push_back(
            Linear(store, base + ".fc2", group, cfg.clinical_hidden, cfg.feature_dim, rng));
    }
}

Tensor ClinicalEmbedder::forward(const std::vector<double>& factor, std::size_t m) const {
    if (m >= dims_.size())
        throw IndexError("clinical factor index " + std::to_string(m) + " out of range [0," +
                         std::to_string(dims_.size()) + ")");
    if (factor.size() != dims_[m])
        throw ShapeError("clinical factor " + std::to_string(m) + " has dim " +
                         std::to_string(factor.size()) + ", expected " +
                         std::to_string(dims_[m]));
    Tensor x({1, factor.size()}, factor);
    return fc2_[m].forward(relu(fc1_[m].forward(x)));
}

Classifier::Classifier(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t hidden, std::size_t classes, Rng& rng) {
    fc1_ = Linear(store, name + ".fc1", ParamGroup::kClassifier, in, hidden, rng);
    fc2_ = Linear(store, name + ".fc2", ParamGroup::kClassifier, hidden, classes, rng);
}

Tensor Classifier::logits(const Tensor& z) const {
    return fc2_.forward(relu(fc1_.forward(z)));
}

Tensor Classifier::forward(const Tensor& z) const { return softmax_rows(logits(z)); }

}  // namespace persam
