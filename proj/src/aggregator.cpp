#include "persam/aggregator.hpp"

#include <cmath>

#include "persam/errors.hpp"

namespace persam {

MultimodalAggregator::MultimodalAggregator(ParameterStore& store, const ModelConfig& cfg,
                                           Rng& rng) {
    const std::size_t r = cfg.feature_dim;
    const double std = transformer_init_std(cfg);
    wq_ = store.add("agg.wq", ParamGroup::kAggregator, {r, r}, trunc_normal(r * r, std, rng));
    wk_ = store.add("agg.wk", ParamGroup::kAggregator, {r, r}, trunc_normal(r * r, std, rng));
    wv_ = store.add("agg.wv", ParamGroup::kAggregator, {r, r}, trunc_normal(r * r, std, rng));
    classifier_ = Classifier(store, "clf", r, cfg.classifier_hidden, cfg.num_classes, rng);
    logit_scale_ =
        cfg.scale_relevance_logits ? 1.0 / std::sqrt(static_cast<double>(r)) : 1.0;
}

Projections MultimodalAggregator::project(const TokenMatrix& encoded) const {
    Projections p;
    Tensor cls = encoded.class_rows();
    Tensor patch = encoded.patch_rows();
    Tensor clin = encoded.clinical_rows();
    // rows are tokens, so h W^T == (W h) for each row
    p.class_queries = matmul(cls, transpose(wq_));
    p.clinical_queries = matmul(clin, transpose(wq_));
    p.patch_keys = matmul(patch, transpose(wk_));
    p.clinical_keys = matmul(clin, transpose(wk_));
    p.patch_values = matmul(patch, transpose(wv_));
    return p;
}

Tensor MultimodalAggregator::class_wise_attention(const Projections& p) const {
    Tensor logits = matmul(p.patch_keys, transpose(p.class_queries));  // {L, C}
    if (logit_scale_ != 1.0) logits = mul_scalar(logits, logit_scale_);
    return sigmoid(logits);
}

Tensor MultimodalAggregator::exploratory_attention(const Projections& p) const {
    Tensor logits = matmul(p.patch_keys, transpose(p.clinical_queries));  // {L, M}
    if (logit_scale_ != 1.0) logits = mul_scalar(logits, logit_scale_);
    return mean_rows(sigmoid(logits));  // {L, 1}
}

Tensor MultimodalAggregator::class_clinical_relevance(const Projections& p) const {
    Tensor logits = matmul(p.class_queries, transpose(p.clinical_keys));  // {C, M}
    if (logit_scale_ != 1.0) logits = mul_scalar(logits, logit_scale_);
    return mean_rows(sigmoid(logits));  // {C, 1}
}

Tensor explanatory_attention(const Tensor& class_wise, const Tensor& class_clinical,
                             const Tensor& exploratory) {
    const std::size_t l = class_wise.rows(), c = class_wise.cols();
    if (exploratory.numel() != l)
        throw ShapeError("explanatory_attention: psi has " + shape_str(exploratory.shape()) +
                         ", expected " + std::to_string(l) + " entries");
    if (class_clinical.numel() != c)
        throw ShapeError("explanatory_attention: phi has " +
                         shape_str(class_clinical.shape()) + ", expected " +
                         std::to_string(c) + " entries");
    // multiply in the written order a * phi * psi so the triple product is
    // bit-exactly reproducible from the three arrays
    return scale_rows(scale_cols(class_wise, class_clinical), exploratory);
}

AttentionTriple MultimodalAggregator::attentions(const Projections& p) const {
    AttentionTriple t;
    t.class_wise = class_wise_attention(p);
    t.exploratory = exploratory_attention(p);
    t.class_clinical = class_clinical_relevance(p);
    t.explanatory = explanatory_attention(t.class_wise, t.class_clinical, t.exploratory);
    return t;
}

Tensor MultimodalAggregator::aggregate(const Tensor& explanatory,
                                       const Tensor& patch_values) const {
    Tensor per_patch = max_rows(explanatory);  // {L, 1}
    Tensor total = sum_all(per_patch);
    if (total.item() < 1e-30)
        throw DegenerateAttentionError(
            "aggregate: explanatory attention mass below 1e-30, cannot normalize");
    Tensor weights = div_by_scalar_tensor(per_patch, total);   // {L, 1}, sums to 1
    return transpose(matmul(transpose(patch_values), weights));  // {1, R}
}

Tensor MultimodalAggregator::classify(const Tensor& z) const {
    return classifier_.forward(z);
}

}  // namespace persam
