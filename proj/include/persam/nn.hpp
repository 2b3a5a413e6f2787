#pragma once

#include <string>
#include <vector>

#include "persam/config.hpp"
#include "persam/params.hpp"
#include "persam/rng.hpp"
#include "persam/tensor.hpp"

namespace persam {

std::vector<double> he_normal(std::size_t fan_in, std::size_t n, Rng& rng);
std::vector<double> xavier_normal(std::size_t fan_in, std::size_t fan_out, std::size_t n,
                                  Rng& rng);
std::vector<double> trunc_normal(std::size_t n, double stddev, Rng& rng);

// y = x W + b with W {in, out}, b {1, out}
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, ParamGroup group,
           std::size_t in, std::size_t out, Rng& rng, double weight_std = -1.0);

    Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, w_), b_); }
    const Tensor& weight() const { return w_; }
    const Tensor& bias() const { return b_; }

private:
    Tensor w_, b_;
};

// Two conv layers (stride 2, 3x3, ReLU) + global average pool + linear head.
// Maps one {channels, S, S} patch to a {1, R} feature row.
class PatchExtractor {
public:
    PatchExtractor() = default;
    PatchExtractor(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& patch) const;

    std::size_t patch_size() const { return patch_size_; }
    std::size_t patch_channels() const { return patch_channels_; }

private:
    Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
    Linear proj_;
    std::size_t patch_size_ = 0, patch_channels_ = 0;
};

// Per-factor two-layer MLP with ReLU: {1, dim_m} -> {1, R}.
class ClinicalEmbedder {
public:
    ClinicalEmbedder() = default;
    ClinicalEmbedder(ParameterStore& store, const ModelConfig& cfg, Rng& rng,
                     ParamGroup group = ParamGroup::kClinical);

    Tensor forward(const std::vector<double>& factor, std::size_t m) const;
    std::size_t num_factors() const { return dims_.size(); }

private:
    std::vector<Linear> fc1_, fc2_;
    std::vector<std::size_t> dims_;
};

// Hidden layer + ReLU + linear + softmax over classes.
class Classifier {
public:
    Classifier() = default;
    Classifier(ParameterStore& store, const std::string& name, std::size_t in,
               std::size_t hidden, std::size_t classes, Rng& rng);

    Tensor forward(const Tensor& z) const;  // {1, in} -> {1, C} probabilities
    Tensor logits(const Tensor& z) const;

private:
    Linear fc1_, fc2_;
};

}  // namespace persam
