#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "persam/data_synth.hpp"
#include "persam/errors.hpp"
#include "testing/oracles.hpp"

using namespace persam;
namespace fs = std::filesystem;

namespace {

GenConfig small_gen() {
    GenConfig cfg;
    cfg.cases = 30;
    cfg.pool_size = 20;
    return cfg;
}

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("persam_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("typical ring case masks exactly the ring-motif patches") {
    GenConfig cfg = small_gen();
    auto t = persam::testing::make_templates(cfg);
    SyntheticCase c = generate_case(cfg, 0, /*label=*/1, /*atypical=*/false, Rng(5));
    CHECK(c.visible_motif == 1);
    const std::size_t n = cfg.patch_channels * cfg.patch_size * cfg.patch_size;
    std::size_t marked = 0;
    for (std::size_t p = 0; p < cfg.pool_size; ++p) {
        const double resp = persam::testing::filter_response(
            c.patches.data() + p * n, t.ring, t.ring_norm, cfg.background_noise);
        if (c.evidence[p]) {
            ++marked;
            CHECK(resp > 5.0);  // motif present
        } else {
            CHECK(resp < 5.0);  // background only
        }
    }
    CHECK(marked >= static_cast<std::size_t>(0.3 * cfg.pool_size));
}

TEST_CASE("same seed gives an identical case") {
    GenConfig cfg = small_gen();
    SyntheticCase a = generate_case(cfg, 3, 2, true, Rng(99));
    SyntheticCase b = generate_case(cfg, 3, 2, true, Rng(99));
    CHECK(a == b);
}

TEST_CASE("class balance and atypical stratification of the generated dataset") {
    GenConfig cfg = small_gen();
    cfg.cases = 60;
    SynthDataset ds = generate_dataset(cfg, 7);
    std::vector<int> per_class(3, 0), atypical(3, 0);
    for (const auto& c : ds.cases) {
        ++per_class[c.label];
        if (c.atypical) ++atypical[c.label];
    }
    for (int c = 0; c < 3; ++c) {
        CHECK(per_class[c] == 20);
        CHECK(atypical[c] == 10);  // fraction 0.5
    }
}

TEST_CASE("image-only Bayes ceiling on the atypical stratum is 75% by construction") {
    GenConfig cfg;
    cfg.cases = 300;
    cfg.pool_size = 24;
    SynthDataset ds = generate_dataset(cfg, 41);
    auto t = persam::testing::make_templates(cfg);

    // Analytic: the best image-only rule predicts the visible motif and is
    // right exactly when motif == label, i.e. with probability
    // visible_match_prob.
    CHECK(cfg.visible_match_prob == doctest::Approx(0.75));

    std::size_t correct = 0, total = 0, motif_recovered = 0;
    for (const auto& c : ds.cases) {
        if (!c.atypical) continue;
        ++total;
        const int pred = persam::testing::bayes_image_only_prediction(c, cfg, t);
        if (pred == c.visible_motif) ++motif_recovered;
        if (pred == c.label) ++correct;
    }
    const double motif_rate =
        static_cast<double>(motif_recovered) / static_cast<double>(total);
    const double acc = static_cast<double>(correct) / static_cast<double>(total);
    CHECK(motif_rate > 0.98);  // matched filter reads the weak motifs reliably
    CHECK(acc > 0.75 - 0.08);  // binomial noise around the 0.75 ceiling
    CHECK(acc < 0.75 + 0.08);
}

TEST_CASE("typical-case oracle from mask-selected patches is perfect") {
    GenConfig cfg = small_gen();
    cfg.cases = 60;
    SynthDataset ds = generate_dataset(cfg, 13);
    auto t = persam::testing::make_templates(cfg);
    for (const auto& c : ds.cases) {
        if (c.atypical) continue;
        CHECK(persam::testing::mask_oracle_prediction(c, cfg, t) == c.label);
    }
}

TEST_CASE("flipping the disambiguating record bit flips the atypical label") {
    GenConfig cfg = small_gen();
    for (int seed = 0; seed < 20; ++seed) {
        SyntheticCase c = generate_case(cfg, seed, seed % 3, /*atypical=*/true,
                                        Rng(seed + 100));
        const int bit = static_cast<int>(c.factor1[kDisambiguatingBit]);
        CHECK(atypical_label(c.visible_motif, bit, 3) == c.label);
        const int flipped = atypical_label(c.visible_motif, 1 - bit, 3);
        CHECK(flipped != c.label);  // images unchanged, label flips
    }
}

TEST_CASE("record fields honor their documented types") {
    GenConfig cfg = small_gen();
    SynthDataset ds = generate_dataset(cfg, 21);
    for (const auto& c : ds.cases) {
        CHECK(c.factor1.size() == 18);
        CHECK(c.factor2.size() == 10);
        CHECK(c.factor1[0] >= 0.0f);  // age analog, nonnegative integer
        CHECK(c.factor1[0] == doctest::Approx(std::floor(c.factor1[0])));
        for (std::size_t j = 1; j < 18; ++j)
            CHECK((c.factor1[j] == 0.0f || c.factor1[j] == 1.0f));
    }
}

TEST_CASE("sample_bags: whole pool, distinct indices, seed sensitivity, errors") {
    GenConfig cfg = small_gen();
    SyntheticCase c = generate_case(cfg, 0, 0, false, Rng(1));

    Rng rng(2);
    auto bags = sample_bags(c, 1, cfg.pool_size, rng);
    std::set<std::size_t> s(bags[0].indices.begin(), bags[0].indices.end());
    CHECK(s.size() == cfg.pool_size);  // the bag is the whole pool

    Rng rng2(3);
    auto bags2 = sample_bags(c, 100, 8, rng2);
    for (const auto& b : bags2) {
        std::set<std::size_t> dedup(b.indices.begin(), b.indices.end());
        CHECK(dedup.size() == b.indices.size());
    }

    // two seeds: identical bag sets should be rare across 100 draws
    Rng ra(4), rb(5);
    auto bag_a = sample_bags(c, 100, 8, ra);
    auto bag_b = sample_bags(c, 100, 8, rb);
    int collisions = 0;
    for (int i = 0; i < 100; ++i) {
        std::set<std::size_t> sa(bag_a[i].indices.begin(), bag_a[i].indices.end());
        std::set<std::size_t> sb(bag_b[i].indices.begin(), bag_b[i].indices.end());
        if (sa == sb) ++collisions;
    }
    CHECK(collisions < 5);

    Rng rng3(6);
    CHECK_THROWS_AS(sample_bags(c, 1, cfg.pool_size + 1, rng3), InsufficientPatchesError);
}

TEST_CASE("split_folds: stratified 3:1:1, full test coverage, class-size contract") {
    GenConfig cfg = small_gen();
    cfg.cases = 30;  // 10 per class
    SynthDataset ds = generate_dataset(cfg, 31);
    Rng rng(8);
    auto folds = split_folds(ds, 5, rng);
    CHECK(folds.size() == 5);

    std::set<int> all_test;
    for (const auto& f : folds) {
        std::vector<int> per_class(3, 0);
        for (int ci : f.test) {
            ++per_class[ds.cases[ci].label];
            all_test.insert(ci);
        }
        for (int c = 0; c < 3; ++c) CHECK(per_class[c] == 2);  // 10 cases, k=5

        // disjointness
        std::set<int> train(f.train.begin(), f.train.end());
        for (int ci : f.val) CHECK(train.count(ci) == 0);
        for (int ci : f.test) CHECK(train.count(ci) == 0);

        // train share within one case of 3/5 per class
        std::vector<int> train_per_class(3, 0);
        for (int ci : f.train) ++train_per_class[ds.cases[ci].label];
        for (int c = 0; c < 3; ++c) CHECK(std::abs(train_per_class[c] - 6) <= 1);
    }
    CHECK(all_test.size() == ds.cases.size());  // every case tested exactly once

    GenConfig tiny = small_gen();
    tiny.cases = 9;  // only 3 per class
    SynthDataset small = generate_dataset(tiny, 1);
    Rng rng2(9);
    CHECK_THROWS_AS(split_folds(small, 5, rng2), StratificationError);
}

TEST_CASE("dataset save/load round-trips bit-exactly") {
    GenConfig cfg = small_gen();
    SynthDataset ds = generate_dataset(cfg, 77);
    const fs::path dir = temp_dir("roundtrip");
    save_dataset(ds, dir.string());
    SynthDataset loaded = load_dataset(dir.string());
    CHECK(loaded.seed == ds.seed);
    REQUIRE(loaded.cases.size() == ds.cases.size());
    for (std::size_t i = 0; i < ds.cases.size(); ++i) CHECK(loaded.cases[i] == ds.cases[i]);
    fs::remove_all(dir);
}

TEST_CASE("truncated blob raises a parse error, not a crash") {
    GenConfig cfg = small_gen();
    cfg.cases = 6;
    SynthDataset ds = generate_dataset(cfg, 3);
    const fs::path dir = temp_dir("truncated");
    save_dataset(ds, dir.string());
    // chop the blob in half
    const fs::path blob = dir / "data.bin";
    const auto size = fs::file_size(blob);
    fs::resize_file(blob, size / 2);
    CHECK_THROWS_AS(load_dataset(dir.string()), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("unsupported manifest version is rejected explicitly") {
    GenConfig cfg = small_gen();
    cfg.cases = 6;
    SynthDataset ds = generate_dataset(cfg, 3);
    const fs::path dir = temp_dir("version");
    save_dataset(ds, dir.string());
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto pos = text.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"version\": 9");
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << text;
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.string()), UnsupportedVersionError);
    fs::remove_all(dir);
}

TEST_CASE("malformed manifest raises a parse error carrying a byte offset") {
    const fs::path dir = temp_dir("malformed");
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << "{ \"version\": 1, }";
    out.close();
    try {
        load_dataset(dir.string());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset > 0);
    }
    fs::remove_all(dir);
}

TEST_CASE("make_bag carries patches, record, label, and evidence") {
    GenConfig cfg = small_gen();
    SyntheticCase c = generate_case(cfg, 4, 1, false, Rng(11));
    Rng rng(12);
    auto bags = sample_bags(c, 1, 8, rng);
    Bag bag = make_bag(c, bags[0]);
    CHECK(bag.patches.size() == 8);
    CHECK(bag.factors.size() == 2);
    CHECK(bag.factors[0].size() == 18);
    CHECK(bag.factors[1].size() == 10);
    CHECK(bag.label == 1);
    CHECK(bag.evidence.size() == 8);
    CHECK(bag.patches[0].shape() == Shape{3, cfg.patch_size, cfg.patch_size});
    // age analog rescaled onto the unit range of the binary fields
    CHECK(bag.factors[0][0] <= 1.0);

    // record swap: same patches, donor record
    SyntheticCase donor = generate_case(cfg, 5, 2, false, Rng(13));
    Bag swapped = make_bag_with_record(c, bags[0], donor);
    CHECK(swapped.label == 1);  // ground truth stays with the image case
    CHECK(swapped.factors[1][0] == doctest::Approx(static_cast<double>(donor.factor2[0])));
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(swapped.patches[i].data() == bag.patches[i].data());
}

TEST_CASE("augment_patch permutes pixels without changing their multiset") {
    GenConfig cfg = small_gen();
    SyntheticCase c = generate_case(cfg, 4, 0, false, Rng(14));
    Rng rng(15);
    auto bags = sample_bags(c, 1, 4, rng);
    Bag bag = make_bag(c, bags[0]);
    Rng arng(16);
    Tensor aug = augment_patch(bag.patches[0], arng);
    auto a = bag.patches[0].data();
    auto b = aug.data();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
}

TEST_CASE("dataset statistics are reproducible from config and seed") {
    GenConfig cfg = small_gen();
    SynthDataset a = generate_dataset(cfg, 55);
    SynthDataset b = generate_dataset(cfg, 55);
    REQUIRE(a.cases.size() == b.cases.size());
    for (std::size_t i = 0; i < a.cases.size(); ++i) CHECK(a.cases[i] == b.cases[i]);
}

TEST_CASE("uninformative-record mode removes the class signal from records") {
    GenConfig cfg = small_gen();
    cfg.cases = 150;
    cfg.atypical_fraction = 0.0;
    cfg.informative_records = false;
    SynthDataset ds = generate_dataset(cfg, 17);
    // indicator bits should be ~50/50 regardless of class
    std::vector<double> on(3, 0.0), count(3, 0.0);
    for (const auto& c : ds.cases) {
        count[c.label] += 1.0;
        on[c.label] += c.factor1[1 + c.label];
    }
    for (int c = 0; c < 3; ++c) {
        const double rate = on[c] / count[c];
        CHECK(rate > 0.25);
        CHECK(rate < 0.75);
    }
}
