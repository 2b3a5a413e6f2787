#pragma once

#include <vector>

#include "persam/config.hpp"
#include "persam/nn.hpp"
#include "persam/params.hpp"
#include "persam/tensor.hpp"

namespace persam {

// Assembled token set. Tokens are rows of a {L+M+C, R} tensor in the fixed
// order: patch tokens [0, L), clinical tokens [L, L+M), class tokens
// [L+M, L+M+C).
struct TokenMatrix {
    Tensor tokens;
    std::size_t num_patches = 0;   // L
    std::size_t num_factors = 0;   // M
    std::size_t num_classes = 0;   // C

    std::size_t token_count() const { return num_patches + num_factors + num_classes; }
    Tensor patch_rows() const { return slice_rows(tokens, 0, num_patches); }
    Tensor clinical_rows() const {
        return slice_rows(tokens, num_patches, num_patches + num_factors);
    }
    Tensor class_rows() const {
        return slice_rows(tokens, num_patches + num_factors, token_count());
    }
};

// Additive embeddings marking each token as patch / clinical factor m / class.
// One shared vector for all patches, one per clinical factor, exact zero for
// class tokens.
struct TypeEmbeddings {
    Tensor patch;                  // {1, R}, trainable
    std::vector<Tensor> clinical;  // M x {1, R}, trainable
};

struct ClassTokens {
    std::vector<Tensor> tokens;  // C x {1, R}, trainable
};

// Self-attention probabilities kept from a forward pass:
// maps[layer][head] is a row-stochastic {T, T} matrix (values only, no graph).
struct AttentionMaps {
    std::vector<std::vector<Tensor>> maps;
};

struct EncodeResult {
    TokenMatrix encoded;
    AttentionMaps attention;
};

// Post-norm Transformer encoder: per layer, multi-head self-attention with
// residual + layer norm, then a ReLU feed-forward block with residual +
// layer norm.
class TransformerEncoder {
public:
    TransformerEncoder() = default;
    TransformerEncoder(ParameterStore& store, const ModelConfig& cfg, Rng& rng,
                       ParamGroup group = ParamGroup::kEncoder);

    EncodeResult forward(const TokenMatrix& input, Rng& dropout_rng, bool training) const;

private:
    struct Layer {
        Linear wq, wk, wv, wo;
        Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
        Linear ffn1, ffn2;
    };
    std::vector<Layer> layers_;
    std::size_t heads_ = 0;
    double dropout_ = 0.0;
};

// Feature embedding + token assembly + Transformer encoding for one bag.
class MultimodalEncoder {
public:
    MultimodalEncoder() = default;
    MultimodalEncoder(ParameterStore& store, const ModelConfig& cfg, Rng& rng);

    const PatchExtractor& extractor() const { return extractor_; }
    const ClinicalEmbedder& embedder() const { return embedder_; }
    const TypeEmbeddings& type_embeddings() const { return type_emb_; }
    const ClassTokens& class_tokens() const { return class_tokens_; }

    TokenMatrix assemble(const std::vector<Tensor>& patch_feats,
                         const std::vector<Tensor>& clinical_feats) const;

    // patches: L x {ch, S, S}; factors: M raw clinical vectors.
    EncodeResult encode_bag(const std::vector<Tensor>& patches,
                            const std::vector<std::vector<double>>& factors,
                            Rng& dropout_rng, bool training) const;

    EncodeResult encode_tokens(const TokenMatrix& tm, Rng& dropout_rng, bool training) const {
        return transformer_.forward(tm, dropout_rng, training);
    }

private:
    ModelConfig cfg_;
    PatchExtractor extractor_;
    ClinicalEmbedder embedder_;
    TypeEmbeddings type_emb_;
    ClassTokens class_tokens_;
    TransformerEncoder transformer_;
};

// Token assembly usable on its own (layout checks, baselines).
TokenMatrix assemble_tokens(const std::vector<Tensor>& patch_feats,
                            const std::vector<Tensor>& clinical_feats,
                            const ClassTokens& class_tokens, const TypeEmbeddings& emb);

// Final-layer, head-averaged self-attention row from clinical token m,
// restricted to the patch columns. Length L, entries >= 0, sum <= 1.
std::vector<double> clinical_to_patch_attention(const AttentionMaps& maps,
                                                const TokenMatrix& layout, std::size_t m);

// Same reduction for an arbitrary token row (class-token salience in the
// Transformer baselines).
std::vector<double> token_to_patch_attention(const AttentionMaps& maps,
                                             std::size_t num_patches, std::size_t row);

}  // namespace persam
