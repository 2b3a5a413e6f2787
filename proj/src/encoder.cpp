#include "persam/encoder.hpp"

#include <cmath>

#include "persam/errors.hpp"

namespace persam {

TransformerEncoder::TransformerEncoder(ParameterStore& store, const ModelConfig& cfg,
                                       Rng& rng, ParamGroup group)
    : heads_(cfg.heads), dropout_(cfg.dropout) {
    const std::size_t r = cfg.feature_dim;
    const std::size_t ffn = cfg.ffn_multiplier * r;
    const double std = transformer_init_std(cfg);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string base = "enc.layer" + std::to_string(l);
        Layer layer;
        layer.wq = Linear(store, base + ".attn.q", group, r, r, rng, std);
        layer.wk = Linear(store, base + ".attn.k", group, r, r, rng, std);
        layer.wv = Linear(store, base + ".attn.v", group, r, r, rng, std);
        layer.wo = Linear(store, base + ".attn.o", group, r, r, rng, std);
        layer.ln1_gamma =
            store.add(base + ".ln1.gamma", group, {1, r}, std::vector<double>(r, 1.0));
        layer.ln1_beta =
            store.add(base + ".ln1.beta", group, {1, r}, std::vector<double>(r, 0.0));
        layer.ln2_gamma =
            store.add(base + ".ln2.gamma", group, {1, r}, std::vector<double>(r, 1.0));
        layer.ln2_beta =
            store.add(base + ".ln2.beta", group, {1, r}, std::vector<double>(r, 0.0));
        layer.ffn1 = Linear(store, base + ".ffn1", group, r, ffn, rng, std);
        layer.ffn2 = Linear(store, base + ".ffn2", group, ffn, r, rng, std);
        layers_.push_back(std::move(layer));
    }
}

EncodeResult TransformerEncoder::forward(const TokenMatrix& input, Rng& dropout_rng,
                                         bool training) const {
    const std::size_t t = input.token_count();
    const std::size_t r = input.tokens.cols();
    const std::size_t d = r / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor x = input.tokens;
    AttentionMaps maps;
    maps.maps.resize(layers_.size());

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        Tensor q = layer.wq.forward(x);
        Tensor k = layer.wk.forward(x);
        Tensor v = layer.wv.forward(x);

        std::vector<Tensor> head_outputs;
        head_outputs.reserve(heads_);
        Tensor concat;
        for (std::size_t h = 0; h < heads_; ++h) {
            Tensor qh = slice_cols(q, h * d, (h + 1) * d);
            Tensor kh = slice_cols(k, h * d, (h + 1) * d);
            Tensor vh = slice_cols(v, h * d, (h + 1) * d);
            Tensor scores = mul_scalar(matmul(qh, transpose(kh)), scale);
            Tensor probs = softmax_rows(scores);
            maps.maps[l].push_back(probs.detach());
            Tensor attn = dropout(probs, dropout_, dropout_rng, training);
            Tensor oh = matmul(attn, vh);
            concat = h == 0 ? oh : concat_cols(concat, oh);
        }
        Tensor attn_out = dropout(layer.wo.forward(concat), dropout_, dropout_rng, training);
        x = layer_norm_rows(add(x, attn_out), layer.ln1_gamma, layer.ln1_beta);

        Tensor ff = layer.ffn2.forward(relu(layer.ffn1.forward(x)));
        ff = dropout(ff, dropout_, dropout_rng, training);
        x = layer_norm_rows(add(x, ff), layer.ln2_gamma, layer.ln2_beta);
    }

    (void)t;
    EncodeResult out;
    out.encoded = TokenMatrix{x, input.num_patches, input.num_factors, input.num_classes};
    out.attention = std::move(maps);
    return out;
}

MultimodalEncoder::MultimodalEncoder(ParameterStore& store, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    extractor_ = PatchExtractor(store, cfg, rng);
    embedder_ = ClinicalEmbedder(store, cfg, rng);
    const std::size_t r = cfg.feature_dim;
    type_emb_.patch =
        store.add("enc.type.patch", ParamGroup::kEncoder, {1, r}, std::vector<double>(r, 0.0));
    for (std::size_t m = 0; m < cfg.num_factors; ++m)
        type_emb_.clinical.push_back(store.add("enc.type.clinical" + std::to_string(m),
                                               ParamGroup::kEncoder, {1, r},
                                               std::vector<double>(r, 0.0)));
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
        class_tokens_.tokens.push_back(
            store.add("enc.cls" + std::to_string(c), ParamGroup::kEncoder, {1, r},
                      trunc_normal(r, transformer_init_std(cfg), rng)));
    transformer_ = TransformerEncoder(store, cfg, rng);
}

TokenMatrix assemble_tokens(const std::vector<Tensor>& patch_feats,
                            const std::vector<Tensor>& clinical_feats,
                            const ClassTokens& class_tokens, const TypeEmbeddings& emb) {
    if (clinical_feats.size() != emb.clinical.size())
        throw ShapeError("assemble_tokens: got " + std::to_string(clinical_feats.size()) +
                         " clinical features for " + std::to_string(emb.clinical.size()) +
                         " type embeddings");
    if (patch_feats.empty()) throw ShapeError("assemble_tokens: no patch features");

    std::vector<Tensor> rows, embeds;
    rows.reserve(patch_feats.size() + clinical_feats.size() + class_tokens.tokens.size());
    const std::size_t r = patch_feats[0].numel();
    Tensor zero_row = Tensor::zeros({1, r});
    for (const auto& f : patch_feats) {
        rows.push_back(f);
        embeds.push_back(emb.patch);  // one shared embedding for every patch
    }
    for (std::size_t m = 0; m < clinical_feats.size(); ++m) {
        rows.push_back(clinical_feats[m]);
        embeds.push_back(emb.clinical[m]);
    }
    for (const auto& c : class_tokens.tokens) {
        rows.push_back(c);
        embeds.push_back(zero_row);  // class tokens carry no type embedding
    }
    Tensor tokens = add(stack_rows(rows), stack_rows(embeds));
    return TokenMatrix{tokens, patch_feats.size(), clinical_feats.size(),
                       class_tokens.tokens.size()};
}

TokenMatrix MultimodalEncoder::assemble(const std::vector<Tensor>& patch_feats,
                                        const std::vector<Tensor>& clinical_feats) const {
    if (clinical_feats.size() != cfg_.num_factors)
        throw ShapeError("assemble: expected " + std::to_string(cfg_.num_factors) +
                         " clinical features, got " + std::to_string(clinical_feats.size()));
    return assemble_tokens(patch_feats, clinical_feats, class_tokens_, type_emb_);
}

EncodeResult MultimodalEncoder::encode_bag(const std::vector<Tensor>& patches,
                                           const std::vector<std::vector<double>>& factors,
                                           Rng& dropout_rng, bool training) const {
    std::vector<Tensor> patch_feats;
    patch_feats.reserve(patches.size());
    for (const auto& p : patches) patch_feats.push_back(extractor_.forward(p));
    std::vector<Tensor> clinical_feats;
    clinical_feats.reserve(factors.size());
    for (std::size_t m = 0; m < factors.size(); ++m)
        clinical_feats.push_back(embedder_.forward(factors[m], m));
    return transformer_.forward(assemble(patch_feats, clinical_feats), dropout_rng, training);
}

std::vector<double> token_to_patch_attention(const AttentionMaps& maps,
                                             std::size_t num_patches, std::size_t row) {
    if (maps.maps.empty()) throw ContractError("no attention maps recorded");
    const auto& last = maps.maps.back();
    const std::size_t t = last[0].rows();
    if (row >= t)
        throw IndexError("token row " + std::to_string(row) + " out of range [0," +
                         std::to_string(t) + ")");
    std::vector<double> out(num_patches, 0.0);
    for (const auto& head : last)
        for (std::size_t j = 0; j < num_patches; ++j) out[j] += head.at(row, j);
    for (auto& v : out) v /= static_cast<double>(last.size());
    return out;
}

std::vector<double> clinical_to_patch_attention(const AttentionMaps& maps,
                                                const TokenMatrix& layout, std::size_t m) {
    if (m >= layout.num_factors)
        throw IndexError("clinical factor index " + std::to_string(m) + " out of range [0," +
                         std::to_string(layout.num_factors) + ")");
    return token_to_patch_attention(maps, layout.num_patches, layout.num_patches + m);
}

}  // namespace persam
