#include "persam/baselines.hpp"

#include <cmath>

#include "persam/errors.hpp"
#include "persam/loss.hpp"

namespace persam {

const char* baseline_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::kClinicalMlp: return "clinical-mlp";
        case BaselineKind::kImgMil: return "img-mil";
        case BaselineKind::kImgClinicalMil: return "img-clinical-mil";
        case BaselineKind::kImgTransformer: return "img-transformer";
        case BaselineKind::kImgClinicalTransformer: return "img-clinical-transformer";
    }
    return "?";
}

BaselineKind baseline_from_name(const std::string& name) {
    for (BaselineKind k :
         {BaselineKind::kClinicalMlp, BaselineKind::kImgMil, BaselineKind::kImgClinicalMil,
          BaselineKind::kImgTransformer, BaselineKind::kImgClinicalTransformer})
        if (name == baseline_name(k)) return k;
    throw ConfigError("unknown model kind '" + name + "'");
}

namespace {

std::vector<double> concat_record(const Bag& bag) {
    std::vector<double> v;
    for (const auto& f : bag.factors) v.insert(v.end(), f.begin(), f.end());
    return v;
}

// Three-layer MLP over the concatenated clinical factors. Never looks at the
// patches.
class ClinicalMlpModel : public BagModel {
public:
    ClinicalMlpModel(const ModelConfig& cfg, std::uint64_t seed)
        : cfg_(cfg), name_(baseline_name(BaselineKind::kClinicalMlp)) {
        Rng rng(seed);
        std::size_t in = 0;
        for (std::size_t d : cfg.factor_dims) in += d;
        const std::size_t h1 = cfg.clinical_hidden;
        const std::size_t h2 = 2 * cfg.clinical_hidden;
        fc1_ = Linear(store_, "clf.fc1", ParamGroup::kClassifier, in, h1, rng);
        fc2_ = Linear(store_, "clf.fc2", ParamGroup::kClassifier, h1, h2, rng);
        fc3_ = Linear(store_, "clf.fc3", ParamGroup::kClassifier, h2, cfg.num_classes, rng);
    }

    const std::string& name() const override { return name_; }
    const ModelConfig& config() const override { return cfg_; }
    ParameterStore& params() override { return store_; }

    Tensor predict(const Bag& bag, Rng&, bool) override {
        auto rec = concat_record(bag);
        Tensor x({1, rec.size()}, rec);
        return softmax_rows(fc3_.forward(relu(fc2_.forward(relu(fc1_.forward(x))))));
    }

    Tensor loss(const Bag& bag, Rng& rng, bool training) override {
        return cross_entropy(predict(bag, rng, training),
                             onehot(bag.label, cfg_.num_classes));
    }

    std::vector<double> patch_salience(const Bag&) override {
        throw UnsupportedOperationError("clinical-mlp defines no per-patch attention");
    }

private:
    ModelConfig cfg_;
    std::string name_;
    ParameterStore store_;
    Linear fc1_, fc2_, fc3_;
};

// Attention-based MIL pooling: alpha = softmax over patches of w' tanh(V h)
// (optionally gated with a sigmoid branch), z = sum alpha h.
class MilPooling {
public:
    MilPooling() = default;
    MilPooling(ParameterStore& store, const ModelConfig& cfg, Rng& rng) {
        const std::size_t r = cfg.feature_dim, h = cfg.mil_attention_hidden;
        gated_ = cfg.mil_gated_attention;
        v_ = Linear(store, "agg.attn.v", ParamGroup::kAggregator, r, h, rng);
        if (gated_) u_ = Linear(store, "agg.attn.u", ParamGroup::kAggregator, r, h, rng);
        w_ = Linear(store, "agg.attn.w", ParamGroup::kAggregator, h, 1, rng);
    }

    // feats: {L, R}; returns {1, R} pooled feature and {L, 1} weights.
    std::pair<Tensor, Tensor> pool(const Tensor& feats) const {
        Tensor hidden = tanh_like(v_.forward(feats));
        if (gated_) hidden = mul(hidden, sigmoid(u_.forward(feats)));
        Tensor logits = w_.forward(hidden);              // {L, 1}
        Tensor alpha = softmax(transpose(logits), 1);    // {1, L}
        Tensor pooled = matmul(alpha, feats);            // {1, R}
        return {pooled, transpose(alpha)};
    }

private:
    // tanh via sigmoid: tanh(x) = 2 sigmoid(2x) - 1
    static Tensor tanh_like(const Tensor& x) {
        return add_scalar(mul_scalar(sigmoid(mul_scalar(x, 2.0)), 2.0), -1.0);
    }
    Linear v_, u_, w_;
    bool gated_ = false;
};

class ImgMilModel : public BagModel {
public:
    ImgMilModel(const ModelConfig& cfg, std::uint64_t seed, bool use_clinical)
        : cfg_(cfg),
          name_(baseline_name(use_clinical ? BaselineKind::kImgClinicalMil
                                           : BaselineKind::kImgMil)),
          use_clinical_(use_clinical) {
        Rng rng(seed);
        extractor_ = PatchExtractor(store_, cfg, rng);
        pooling_ = MilPooling(store_, cfg, rng);
        std::size_t clf_in = cfg.feature_dim;
        if (use_clinical_) {
            std::size_t rec = 0;
            for (std::size_t d : cfg.factor_dims) rec += d;
            rec_fc1_ = Linear(store_, "g.rec.fc1", ParamGroup::kClinical, rec,
                              cfg.clinical_hidden, rng);
            rec_fc2_ = Linear(store_, "g.rec.fc2", ParamGroup::kClinical,
                              cfg.clinical_hidden, cfg.feature_dim, rng);
            clf_in += cfg.feature_dim;
        }
        classifier_ = Classifier(store_, "clf", clf_in, cfg.mil_classifier_hidden,
                                 cfg.num_classes, rng);
    }

    const std::string& name() const override { return name_; }
    const ModelConfig& config() const override { return cfg_; }
    ParameterStore& params() override { return store_; }

    Tensor predict(const Bag& bag, Rng& rng, bool training) override {
        auto [pooled, weights] = forward_pooled(bag);
        (void)rng;
        (void)training;
        Tensor feature = pooled;
        if (use_clinical_) {
            auto rec = concat_record(bag);
            Tensor x({1, rec.size()}, rec);
            Tensor rec_feat = rec_fc2_.forward(relu(rec_fc1_.forward(x)));
            feature = concat_cols(feature, rec_feat);
        }
        return classifier_.forward(feature);
    }

    Tensor loss(const Bag& bag, Rng& rng, bool training) override {
        return cross_entropy(predict(bag, rng, training),
                             onehot(bag.label, cfg_.num_classes));
    }

    std::vector<double> patch_salience(const Bag& bag) override {
        return forward_pooled(bag).second.data();
    }

private:
    std::pair<Tensor, Tensor> forward_pooled(const Bag& bag) {
        std::vector<Tensor> feats;
        feats.reserve(bag.patches.size());
        for (const auto& p : bag.patches) feats.push_back(extractor_.forward(p));
        return pooling_.pool(stack_rows(feats));
    }

    ModelConfig cfg_;
    std::string name_;
    bool use_clinical_;
    ParameterStore store_;
    PatchExtractor extractor_;
    MilPooling pooling_;
    Linear rec_fc1_, rec_fc2_;
    Classifier classifier_;
};

// Transformer baseline: patch tokens (+ clinical tokens when enabled) plus a
// single class token; the classifier reads the encoded class token.
class ImgTransformerModel : public BagModel {
public:
    ImgTransformerModel(const ModelConfig& cfg, std::uint64_t seed, bool use_clinical)
        : cfg_(cfg),
          name_(baseline_name(use_clinical ? BaselineKind::kImgClinicalTransformer
                                           : BaselineKind::kImgTransformer)),
          use_clinical_(use_clinical) {
        if (!use_clinical_) {
            cfg_.num_factors = 1;  // keep validate() happy; tokens never built
            cfg_.factor_dims = {cfg.factor_dims.empty() ? 1 : cfg.factor_dims[0]};
        }
        cfg_.validate();
        Rng rng(seed);
        extractor_ = PatchExtractor(store_, cfg_, rng);
        if (use_clinical_) embedder_ = ClinicalEmbedder(store_, cfg_, rng);
        const std::size_t r = cfg_.feature_dim;
        type_patch_ = store_.add("enc.type.patch", ParamGroup::kEncoder, {1, r},
                                 std::vector<double>(r, 0.0));
        if (use_clinical_)
            for (std::size_t m = 0; m < cfg_.num_factors; ++m)
                type_clinical_.push_back(store_.add("enc.type.clinical" + std::to_string(m),
                                                    ParamGroup::kEncoder, {1, r},
                                                    std::vector<double>(r, 0.0)));
        cls_token_ = store_.add("enc.cls", ParamGroup::kEncoder, {1, r},
                                trunc_normal(r, transformer_init_std(cfg_), rng));
        transformer_ = TransformerEncoder(store_, cfg_, rng);
        classifier_ =
            Classifier(store_, "clf", r, cfg_.classifier_hidden, cfg_.num_classes, rng);
    }

    const std::string& name() const override { return name_; }
    const ModelConfig& config() const override { return cfg_; }
    ParameterStore& params() override { return store_; }

    Tensor predict(const Bag& bag, Rng& rng, bool training) override {
        EncodeResult enc = encode(bag, rng, training);
        Tensor cls = enc.encoded.class_rows();
        return classifier_.forward(cls);
    }

    Tensor loss(const Bag& bag, Rng& rng, bool training) override {
        return cross_entropy(predict(bag, rng, training),
                             onehot(bag.label, cfg_.num_classes));
    }

    std::vector<double> patch_salience(const Bag& bag) override {
        Rng rng(0);
        EncodeResult enc = encode(bag, rng, /*training=*/false);
        const std::size_t cls_row = enc.encoded.num_patches + enc.encoded.num_factors;
        return token_to_patch_attention(enc.attention, enc.encoded.num_patches, cls_row);
    }

private:
    EncodeResult encode(const Bag& bag, Rng& rng, bool training) {
        std::vector<Tensor> rows, embeds;
        const std::size_t r = cfg_.feature_dim;
        Tensor zero_row = Tensor::zeros({1, r});
        for (const auto& p : bag.patches) {
            rows.push_back(extractor_.forward(p));
            embeds.push_back(type_patch_);
        }
        std::size_t m_count = 0;
        if (use_clinical_) {
            for (std::size_t m = 0; m < bag.factors.size(); ++m) {
                rows.push_back(embedder_.forward(bag.factors[m], m));
                embeds.push_back(type_clinical_[m]);
            }
            m_count = bag.factors.size();
        }
        rows.push_back(cls_token_);
        embeds.push_back(zero_row);
        TokenMatrix tm{add(stack_rows(rows), stack_rows(embeds)), bag.patches.size(),
                       m_count, 1};
        return transformer_.forward(tm, rng, training);
    }

    ModelConfig cfg_;
    std::string name_;
    bool use_clinical_;
    ParameterStore store_;
    PatchExtractor extractor_;
    ClinicalEmbedder embedder_;
    Tensor type_patch_;
    std::vector<Tensor> type_clinical_;
    Tensor cls_token_;
    TransformerEncoder transformer_;
    Classifier classifier_;
};

}  // namespace

std::unique_ptr<BagModel> build_baseline(BaselineKind kind, const ModelConfig& cfg,
                                         std::uint64_t seed) {
    switch (kind) {
        case BaselineKind::kClinicalMlp:
            return std::make_unique<ClinicalMlpModel>(cfg, seed);
        case BaselineKind::kImgMil:
            return std::make_unique<ImgMilModel>(cfg, seed, false);
        case BaselineKind::kImgClinicalMil:
            return std::make_unique<ImgMilModel>(cfg, seed, true);
        case BaselineKind::kImgTransformer:
            return std::make_unique<ImgTransformerModel>(cfg, seed, false);
        case BaselineKind::kImgClinicalTransformer:
            return std::make_unique<ImgTransformerModel>(cfg, seed, true);
    }
    throw ConfigError("unknown baseline kind");
}

std::unique_ptr<BagModel> build_model(const std::string& name, const ModelConfig& cfg,
                                      std::uint64_t seed) {
    if (name == "persam") return std::make_unique<PersamModel>(cfg, seed);
    return build_baseline(baseline_from_name(name), cfg, seed);
}

std::vector<double> baseline_attention(BagModel& model, const Bag& bag) {
    return model.patch_salience(bag);
}

}  // namespace persam
