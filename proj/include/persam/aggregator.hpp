#pragma once

#include "persam/config.hpp"
#include "persam/encoder.hpp"
#include "persam/nn.hpp"
#include "persam/params.hpp"
#include "persam/tensor.hpp"

namespace persam {

// Single-head query/key/value projections of the encoded tokens. One shared
// W_q projects class and clinical tokens to queries; one shared W_k projects
// patch and clinical tokens to keys; W_v projects patch tokens to values.
struct Projections {
    Tensor class_queries;    // {C, R}
    Tensor patch_keys;       // {L, R}
    Tensor patch_values;     // {L, R}
    Tensor clinical_queries; // {M, R}
    Tensor clinical_keys;    // {M, R}
};

// The four relevance arrays for one bag. explanatory = class_wise * phi * psi
// elementwise; every entry lies strictly inside (0, 1) for finite logits.
struct AttentionTriple {
    Tensor class_wise;      // a,   {L, C}
    Tensor exploratory;     // psi, {L, 1}
    Tensor class_clinical;  // phi, {C, 1}
    Tensor explanatory;     // a',  {L, C}
};

class MultimodalAggregator {
public:
    MultimodalAggregator() = default;
    MultimodalAggregator(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

    Projections project(const TokenMatrix& encoded) const;

    // a_{l,c} = sigmoid(q_c . k_l); sigmoid relevance, not softmax -- no
    // normalization across patches.
    Tensor class_wise_attention(const Projections& p) const;
    // psi_l = mean over factors of sigmoid(q_m . k_l)
    Tensor exploratory_attention(const Projections& p) const;
    // phi_c = mean over factors of sigmoid(q_c . k_m)
    Tensor class_clinical_relevance(const Projections& p) const;

    AttentionTriple attentions(const Projections& p) const;

    // Attention-weighted mean of patch values: weights are the per-patch max
    // of explanatory attention over classes, normalized to sum to one.
    Tensor aggregate(const Tensor& explanatory, const Tensor& patch_values) const;

    Tensor classify(const Tensor& z) const;  // {1, R} -> {1, C} probabilities

private:
    Tensor wq_, wk_, wv_;
    Classifier classifier_;
    double logit_scale_ = 1.0;
};

// Elementwise triple product a'_{l,c} = a_{l,c} * phi_c * psi_l.
Tensor explanatory_attention(const Tensor& class_wise, const Tensor& class_clinical,
                             const Tensor& exploratory);

}  // namespace persam
