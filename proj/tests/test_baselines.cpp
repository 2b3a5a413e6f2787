#include <doctest.h>

#include <cmath>

#include "persam/baselines.hpp"
#include "persam/data_synth.hpp"
#include "persam/errors.hpp"
#include "persam/gradcheck.hpp"
#include "persam/training.hpp"

using namespace persam;

namespace {

ModelConfig bl_cfg() {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.bag_size = 6;
    return cfg;
}

Bag scrambled_patches(const Bag& bag, Rng& rng) {
    Bag out = bag;
    for (auto& p : out.patches) {
        std::vector<double> noise(p.numel());
        for (auto& v : noise) v = rng.uniform();
        p = Tensor(p.shape(), noise);
    }
    return out;
}

}  // namespace

TEST_CASE("build_model covers every kind and rejects unknown names") {
    ModelConfig cfg = bl_cfg();
    for (const char* name : {"clinical-mlp", "img-mil", "img-clinical-mil",
                             "img-transformer", "img-clinical-transformer", "persam"}) {
        auto model = build_model(name, cfg, 1);
        CHECK(model->name() == name);
    }
    CHECK_THROWS_AS(build_model("mystery-net", cfg, 1), ConfigError);
    CHECK_THROWS_AS(baseline_from_name("persam"), ConfigError);  // not a baseline kind
}

TEST_CASE("clinical MLP ignores patch content and order entirely") {
    ModelConfig cfg = bl_cfg();
    auto model = build_model("clinical-mlp", cfg, 7);
    Bag bag = random_bag(cfg, 3);
    Rng rng(0);
    auto base = model->predict(bag, rng, false).data();

    Rng srng(4);
    Bag replaced = scrambled_patches(bag, srng);
    auto moved = model->predict(replaced, rng, false).data();
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == moved[i]);

    Bag permuted = bag;
    std::swap(permuted.patches[0], permuted.patches[3]);
    auto perm = model->predict(permuted, rng, false).data();
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == perm[i]);
}

TEST_CASE("img transformer output is invariant to a clinical-record swap") {
    ModelConfig cfg = bl_cfg();
    auto model = build_model("img-transformer", cfg, 9);
    Bag bag = random_bag(cfg, 5);
    Rng rng(0);
    auto base = model->predict(bag, rng, false).data();
    Bag swapped = bag;
    for (auto& f : swapped.factors)
        for (auto& v : f) v = 1.0 - v;
    auto moved = model->predict(swapped, rng, false).data();
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == moved[i]);

    // the multimodal variants are NOT record-invariant
    auto multi = build_model("img-clinical-transformer", cfg, 9);
    auto mbase = multi->predict(bag, rng, false).data();
    auto mmoved = multi->predict(swapped, rng, false).data();
    double diff = 0.0;
    for (std::size_t i = 0; i < mbase.size(); ++i) diff += std::fabs(mbase[i] - mmoved[i]);
    CHECK(diff > 1e-12);
}

TEST_CASE("img MIL attention weights form a probability vector over the bag") {
    ModelConfig cfg = bl_cfg();
    auto model = build_model("img-mil", cfg, 11);
    Rng brng(6);
    for (int rep = 0; rep < 10; ++rep) {
        Bag bag = random_bag(cfg, 100 + rep);
        auto w = baseline_attention(*model, bag);
        CHECK(w.size() == bag.patches.size());
        double sum = 0.0;
        for (double v : w) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("baseline attention permutes with the patches and stays nonnegative") {
    ModelConfig cfg = bl_cfg();
    for (const char* name : {"img-mil", "img-clinical-mil", "img-transformer",
                             "img-clinical-transformer"}) {
        auto model = build_model(name, cfg, 13);
        Bag bag = random_bag(cfg, 17);
        auto base = baseline_attention(*model, bag);
        for (double v : base) CHECK(v >= 0.0);

        Rng prng(21);
        auto perm = prng.permutation(bag.patches.size());
        Bag shuffled = bag;
        for (std::size_t i = 0; i < perm.size(); ++i)
            shuffled.patches[i] = bag.patches[perm[i]];
        auto moved = baseline_attention(*model, shuffled);
        for (std::size_t i = 0; i < perm.size(); ++i)
            CHECK(moved[i] == doctest::Approx(base[perm[i]]).epsilon(1e-9));
    }
}

TEST_CASE("clinical MLP defines no per-patch attention") {
    ModelConfig cfg = bl_cfg();
    auto model = build_model("clinical-mlp", cfg, 15);
    Bag bag = random_bag(cfg, 19);
    CHECK_THROWS_AS(baseline_attention(*model, bag), UnsupportedOperationError);
}

TEST_CASE("gated MIL pooling variant stays a probability pooling") {
    ModelConfig cfg = bl_cfg();
    cfg.mil_gated_attention = true;
    auto model = build_model("img-mil", cfg, 23);
    Bag bag = random_bag(cfg, 25);
    auto w = baseline_attention(*model, bag);
    double sum = 0.0;
    for (double v : w) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-9);
}

TEST_CASE("every image-using model separates the trivially-separable typical subset") {
    // strong motifs, no atypical cases: sanity floor for the architectures
    GenConfig g;
    g.cases = 45;
    g.pool_size = 12;
    g.atypical_fraction = 0.0;
    SynthDataset ds = generate_dataset(g, 71);
    Rng frng(2);
    auto folds = split_folds(ds, 3, frng);

    ModelConfig cfg = ModelConfig::desk();
    cfg.bag_size = 8;
    TrainOptions opts;
    opts.seed = 3;
    opts.bags_per_case = 4;
    opts.bag_size = 8;

    for (const char* name : {"img-mil", "img-clinical-mil", "img-transformer",
                             "img-clinical-transformer", "persam"}) {
        auto model = build_model(name, cfg, 29);
        TrainResult tr = train(*model, ds, folds[0], opts);
        restore_params(*model, tr.best);
        auto test_bags = build_case_bags(ds, folds[0].test, 4, 8, 31);
        const double acc = evaluate(*model, test_bags).accuracy;
        INFO("model " << std::string(name) << " accuracy " << acc);
        CHECK(acc > 0.9);
    }
}

TEST_CASE("clinical MLP sits at chance on image-only-separable data") {
    GenConfig g;
    g.cases = 90;
    g.pool_size = 10;
    g.atypical_fraction = 0.0;
    g.informative_records = false;  // records carry no class signal
    SynthDataset ds = generate_dataset(g, 73);
    Rng frng(4);
    auto folds = split_folds(ds, 3, frng);

    ModelConfig cfg = ModelConfig::desk();
    cfg.bag_size = 6;
    TrainOptions opts;
    opts.seed = 5;
    opts.bags_per_case = 1;
    opts.bag_size = 6;
    opts.optim.schedule = false;
    opts.optim.epochs = 60;
    opts.optim.lr_classifier = 1e-3;

    auto model = build_model("clinical-mlp", cfg, 37);
    TrainResult tr = train(*model, ds, folds[0], opts);
    restore_params(*model, tr.best);
    auto test_bags = build_case_bags(ds, folds[0].test, 1, 6, 39);
    const double acc = evaluate(*model, test_bags).accuracy;
    // 30 test cases, chance 1/3: accept a generous binomial interval
    CHECK(acc > 0.05);
    CHECK(acc < 0.62);
}
