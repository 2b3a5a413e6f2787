#include "persam/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "persam/errors.hpp"

namespace persam {

using nlohmann::json;

namespace {

json config_to_json(const GenConfig& c) {
    return json{{"cases", c.cases},
                {"num_classes", c.num_classes},
                {"atypical_fraction", c.atypical_fraction},
                {"pool_size", c.pool_size},
                {"patch_size", c.patch_size},
                {"patch_channels", c.patch_channels},
                {"background_level", c.background_level},
                {"background_noise", c.background_noise},
                {"amp_strong", c.amp_strong},
                {"amp_weak", c.amp_weak},
                {"typical_evidence_lo", c.typical_evidence_lo},
                {"typical_evidence_hi", c.typical_evidence_hi},
                {"atypical_evidence_frac", c.atypical_evidence_frac},
                {"visible_match_prob", c.visible_match_prob},
                {"indicator_flip", c.indicator_flip},
                {"blood_shift", c.blood_shift},
                {"informative_records", c.informative_records}};
}

GenConfig config_from_json(const json& j) {
    GenConfig c;
    c.cases = j.value("cases", c.cases);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.atypical_fraction = j.value("atypical_fraction", c.atypical_fraction);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.patch_channels = j.value("patch_channels", c.patch_channels);
    c.background_level = j.value("background_level", c.background_level);
    c.background_noise = j.value("background_noise", c.background_noise);
    c.amp_strong = j.value("amp_strong", c.amp_strong);
    c.amp_weak = j.value("amp_weak", c.amp_weak);
    c.typical_evidence_lo = j.value("typical_evidence_lo", c.typical_evidence_lo);
    c.typical_evidence_hi = j.value("typical_evidence_hi", c.typical_evidence_hi);
    c.atypical_evidence_frac = j.value("atypical_evidence_frac", c.atypical_evidence_frac);
    c.visible_match_prob = j.value("visible_match_prob", c.visible_match_prob);
    c.indicator_flip = j.value("indicator_flip", c.indicator_flip);
    c.blood_shift = j.value("blood_shift", c.blood_shift);
    c.informative_records = j.value("informative_records", c.informative_records);
    if (c.num_classes != 3) throw ConfigError("generator supports exactly 3 classes");
    if (c.atypical_fraction < 0.0 || c.atypical_fraction > 1.0)
        throw ConfigError("atypical_fraction must be in [0, 1]");
    if (c.pool_size == 0 || c.cases == 0) throw ConfigError("cases and pool_size must be >= 1");
    return c;
}

}  // namespace

std::string GenConfig::to_json() const { return config_to_json(*this).dump(2); }

GenConfig GenConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("generator config: " + std::string(e.what()), e.byte);
    }
    return config_from_json(j);
}

int atypical_label(int visible_motif, int bit, int num_classes) {
    return ((visible_motif - bit) % num_classes + num_classes) % num_classes;
}

namespace {

void add_checker(std::vector<float>& patch, std::size_t ch, std::size_t s, double amp) {
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double sign = ((x + y) % 2 == 0) ? 1.0 : -1.0;
                patch[(c * s + y) * s + x] += static_cast<float>(sign * amp);
            }
}

void add_ring(std::vector<float>& patch, std::size_t ch, std::size_t s, double amp) {
    const double cx = static_cast<double>(s - 1) / 2.0;
    const double radius = static_cast<double>(s) * 0.3;
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double d = std::hypot(static_cast<double>(x) - cx,
                                            static_cast<double>(y) - cx);
                if (std::fabs(d - radius) <= 1.2)
                    patch[(c * s + y) * s + x] += static_cast<float>(amp);
            }
}

void clip01(std::vector<float>& v) {
    for (auto& x : v) x = std::min(1.0f, std::max(0.0f, x));
}

}  // namespace

SyntheticCase generate_case(const GenConfig& cfg, int id, int label, bool atypical,
                            Rng rng) {
    SyntheticCase c;
    c.id = id;
    c.label = label;
    c.atypical = atypical;

    int bit = 0;
    if (atypical) {
        bit = rng.bernoulli(1.0 - cfg.visible_match_prob) ? 1 : 0;
        c.visible_motif = (label + bit) % static_cast<int>(cfg.num_classes);
    } else {
        c.visible_motif = label;
    }

    const std::size_t s = cfg.patch_size, ch = cfg.patch_channels;
    const std::size_t pixels = ch * s * s;
    c.patches.resize(cfg.pool_size * pixels);
    c.evidence.assign(cfg.pool_size, 0);

    // Background noise for the whole pool first so the pixel stream does not
    // depend on motif placement.
    for (auto& px : c.patches)
        px = static_cast<float>(cfg.background_level +
                                cfg.background_noise * rng.normal());

    const bool has_motif = c.visible_motif != 2;
    std::size_t n_evidence = 0;
    if (has_motif) {
        double frac = atypical ? cfg.atypical_evidence_frac
                               : rng.uniform(cfg.typical_evidence_lo, cfg.typical_evidence_hi);
        n_evidence = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(cfg.pool_size))));
        n_evidence = std::min(n_evidence, cfg.pool_size);
        const double amp = atypical ? cfg.amp_weak : cfg.amp_strong;
        for (std::size_t idx : rng.sample_without_replacement(cfg.pool_size, n_evidence)) {
            std::vector<float> patch(c.patches.begin() + idx * pixels,
                                     c.patches.begin() + (idx + 1) * pixels);
            if (c.visible_motif == 0) add_checker(patch, ch, s, amp);
            else add_ring(patch, ch, s, amp);
            std::copy(patch.begin(), patch.end(), c.patches.begin() + idx * pixels);
            c.evidence[idx] = 1;
        }
    }
    clip01(c.patches);

    // Factor 1: age analog + 17 binary fields.
    c.factor1.assign(18, 0.0f);
    c.factor1[0] = static_cast<float>(rng.uniform_int(20, 90));
    for (std::size_t j = 1; j <= 3; ++j) {
        bool on;
        if (cfg.informative_records)
            on = (static_cast<int>(j - 1) == label) != rng.bernoulli(cfg.indicator_flip);
        else
            on = rng.bernoulli(0.5);
        c.factor1[j] = on ? 1.0f : 0.0f;
    }
    c.factor1[kDisambiguatingBit] =
        atypical ? static_cast<float>(bit) : (rng.bernoulli(0.5) ? 1.0f : 0.0f);
    for (std::size_t j = kDisambiguatingBit + 1; j < 18; ++j)
        c.factor1[j] = rng.bernoulli(0.5) ? 1.0f : 0.0f;

    // Factor 2: continuous blood-test analog.
    c.factor2.assign(10, 0.0f);
    for (std::size_t j = 0; j < 10; ++j) {
        double mean = 0.0;
        if (cfg.informative_records && j < cfg.num_classes &&
            static_cast<int>(j) == label)
            mean = cfg.blood_shift;
        c.factor2[j] = static_cast<float>(mean + rng.normal());
    }
    return c;
}

SynthDataset generate_dataset(const GenConfig& cfg, std::uint64_t seed) {
    SynthDataset ds;
    ds.config = cfg;
    ds.seed = seed;
    Rng root(seed);

    // Round-robin labels; within each class the leading share of cases is
    // atypical so strata stay balanced for any fraction.
    const std::size_t per_class_ceiling = (cfg.cases + cfg.num_classes - 1) / cfg.num_classes;
    (void)per_class_ceiling;
    std::vector<std::size_t> seen_per_class(cfg.num_classes, 0);
    for (std::size_t i = 0; i < cfg.cases; ++i) {
        const int label = static_cast<int>(i % cfg.num_classes);
        const std::size_t class_total =
            cfg.cases / cfg.num_classes +
            (i % cfg.num_classes < cfg.cases % cfg.num_classes ? 1 : 0);
        const std::size_t n_atypical = static_cast<std::size_t>(
            std::lround(cfg.atypical_fraction * static_cast<double>(class_total)));
        const bool atypical = seen_per_class[label] < n_atypical;
        ++seen_per_class[label];
        ds.cases.push_back(
            generate_case(cfg, static_cast<int>(i), label, atypical, root.fork(i)));
    }
    return ds;
}

std::vector<BagSample> sample_bags(const SyntheticCase& c, std::size_t n_bags,
                                   std::size_t bag_size, Rng& rng) {
    const std::size_t pool = c.evidence.size();
    if (pool < bag_size)
        throw InsufficientPatchesError("case " + std::to_string(c.id) + " has pool " +
                                       std::to_string(pool) + " < bag size " +
                                       std::to_string(bag_size));
    std::vector<BagSample> bags;
    bags.reserve(n_bags);
    for (std::size_t b = 0; b < n_bags; ++b) {
        BagSample s;
        s.indices = rng.sample_without_replacement(pool, bag_size);
        bags.push_back(std::move(s));
    }
    return bags;
}

namespace {

std::vector<std::vector<double>> record_of(const SyntheticCase& c) {
    std::vector<double> f1(c.factor1.begin(), c.factor1.end());
    f1[0] /= 100.0;  // keep the age analog on the same scale as the binary fields
    std::vector<double> f2(c.factor2.begin(), c.factor2.end());
    return {std::move(f1), std::move(f2)};
}

}  // namespace

Bag make_bag_with_record(const SyntheticCase& c, const BagSample& sample,
                         const SyntheticCase& record_source) {
    Bag bag;
    bag.case_id = c.id;
    bag.label = c.label;
    bag.atypical = c.atypical;
    bag.factors = record_of(record_source);
    const std::size_t pool = c.evidence.size();
    const std::size_t pixels = c.patches.size() / pool;
    // infer {ch, s, s} from the pixel count: ch fixed at 3
    const std::size_t ch = 3;
    const std::size_t s = static_cast<std::size_t>(std::lround(
        std::sqrt(static_cast<double>(pixels / ch))));
    for (std::size_t idx : sample.indices) {
        if (idx >= pool)
            throw IndexError("bag index " + std::to_string(idx) + " out of pool " +
                             std::to_string(pool));
        std::vector<double> data(c.patches.begin() + idx * pixels,
                                 c.patches.begin() + (idx + 1) * pixels);
        bag.patches.emplace_back(Shape{ch, s, s}, std::move(data));
        bag.evidence.push_back(c.evidence[idx] != 0);
    }
    return bag;
}

Bag make_bag(const SyntheticCase& c, const BagSample& sample) {
    return make_bag_with_record(c, sample, c);
}

Tensor augment_patch(const Tensor& patch, Rng& rng) {
    const auto& shape = patch.shape();
    const std::size_t ch = shape[0], s = shape[1];
    const bool flip = rng.bernoulli(0.5);
    const int rot = rng.uniform_int(0, 3);
    std::vector<double> out(patch.numel());
    const auto& in = patch.data();
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                std::size_t sy = y, sx = flip ? s - 1 - x : x;
                for (int r = 0; r < rot; ++r) {
                    const std::size_t ny = sx, nx = s - 1 - sy;
                    sy = ny;
                    sx = nx;
                }
                out[(c * s + y) * s + x] = in[(c * s + sy) * s + sx];
            }
    return Tensor(shape, std::move(out));
}

std::vector<FoldSplit> split_folds(const SynthDataset& ds, std::size_t k, Rng& rng) {
    if (k < 3) throw StratificationError("need k >= 3 folds for a train/val/test split");
    std::vector<std::vector<int>> by_class(ds.config.num_classes);
    for (std::size_t i = 0; i < ds.cases.size(); ++i)
        by_class[ds.cases[i].label].push_back(static_cast<int>(i));
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < k)
            throw StratificationError("class " + std::to_string(c) + " has " +
                                      std::to_string(by_class[c].size()) +
                                      " cases, fewer than k=" + std::to_string(k));
        auto perm = rng.permutation(by_class[c].size());
        std::vector<int> shuffled(by_class[c].size());
        for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = by_class[c][perm[i]];
        by_class[c] = std::move(shuffled);
    }

    std::vector<FoldSplit> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        for (const auto& cls : by_class) {
            for (std::size_t i = 0; i < cls.size(); ++i) {
                const std::size_t slot = i % k;
                if (slot == f) folds[f].test.push_back(cls[i]);
                else if (slot == (f + 1) % k) folds[f].val.push_back(cls[i]);
                else folds[f].train.push_back(cls[i]);
            }
        }
    }
    return folds;
}

// ------------------------------------------------------------- persistence

namespace {
constexpr int kDatasetFormatVersion = 1;

void append_f32(std::vector<char>& blob, const std::vector<float>& v) {
    const std::size_t at = blob.size();
    blob.resize(at + v.size() * sizeof(float));
    std::memcpy(blob.data() + at, v.data(), v.size() * sizeof(float));
}

std::vector<float> read_f32(const std::vector<char>& blob, std::size_t offset,
                            std::size_t count) {
    const std::size_t need = offset + count * sizeof(float);
    if (need > blob.size())
        throw ParseError("dataset blob truncated: need " + std::to_string(need) +
                             " bytes, have " + std::to_string(blob.size()),
                         blob.size());
    std::vector<float> v(count);
    std::memcpy(v.data(), blob.data() + offset, count * sizeof(float));
    return v;
}
}  // namespace

void save_dataset(const SynthDataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<char> blob;
    json cases = json::array();
    for (const auto& c : ds.cases) {
        json jc;
        jc["id"] = c.id;
        jc["label"] = c.label;
        jc["atypical"] = c.atypical;
        jc["visible_motif"] = c.visible_motif;
        jc["evidence"] = c.evidence;
        jc["patches_offset"] = blob.size();
        jc["patches_count"] = c.patches.size();
        append_f32(blob, c.patches);
        jc["factor1_offset"] = blob.size();
        jc["factor1_count"] = c.factor1.size();
        append_f32(blob, c.factor1);
        jc["factor2_offset"] = blob.size();
        jc["factor2_count"] = c.factor2.size();
        append_f32(blob, c.factor2);
        cases.push_back(std::move(jc));
    }
    json manifest;
    manifest["version"] = kDatasetFormatVersion;
    manifest["seed"] = ds.seed;
    manifest["config"] = config_to_json(ds.config);
    manifest["blob"] = "data.bin";
    manifest["blob_bytes"] = blob.size();
    manifest["layout"] = "chw-f32-le";
    manifest["cases"] = std::move(cases);

    std::ofstream mf(std::filesystem::path(dir) / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    std::ofstream bf(std::filesystem::path(dir) / "data.bin", std::ios::binary);
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

SynthDataset load_dataset(const std::string& dir) {
    const auto mpath = std::filesystem::path(dir) / "manifest.json";
    std::ifstream mf(mpath, std::ios::binary);
    if (!mf) throw ParseError("cannot open " + mpath.string(), 0);
    std::string text((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("dataset manifest: " + std::string(e.what()), e.byte);
    }
    const int version = manifest.value("version", -1);
    if (version != kDatasetFormatVersion)
        throw UnsupportedVersionError("dataset format version " + std::to_string(version) +
                                      " unsupported (expected " +
                                      std::to_string(kDatasetFormatVersion) + ")");

    SynthDataset ds;
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.config = config_from_json(manifest.at("config"));

    const auto bpath = std::filesystem::path(dir) / manifest.value("blob", "data.bin");
    std::ifstream bf(bpath, std::ios::binary);
    if (!bf) throw ParseError("cannot open " + bpath.string(), 0);
    std::vector<char> blob((std::istreambuf_iterator<char>(bf)),
                           std::istreambuf_iterator<char>());
    if (manifest.contains("blob_bytes") &&
        blob.size() != manifest["blob_bytes"].get<std::size_t>())
        throw ParseError("dataset blob has " + std::to_string(blob.size()) +
                             " bytes, manifest expects " +
                             manifest["blob_bytes"].dump(),
                         blob.size());

    for (const auto& jc : manifest.at("cases")) {
        SyntheticCase c;
        c.id = jc.at("id").get<int>();
        c.label = jc.at("label").get<int>();
        c.atypical = jc.at("atypical").get<bool>();
        c.visible_motif = jc.at("visible_motif").get<int>();
        c.evidence = jc.at("evidence").get<std::vector<std::uint8_t>>();
        c.patches = read_f32(blob, jc.at("patches_offset").get<std::size_t>(),
                             jc.at("patches_count").get<std::size_t>());
        c.factor1 = read_f32(blob, jc.at("factor1_offset").get<std::size_t>(),
                             jc.at("factor1_count").get<std::size_t>());
        c.factor2 = read_f32(blob, jc.at("factor2_offset").get<std::size_t>(),
                             jc.at("factor2_count").get<std::size_t>());
        ds.cases.push_back(std::move(c));
    }
    return ds;
}

}  // namespace persam
