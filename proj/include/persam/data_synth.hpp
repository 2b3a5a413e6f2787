#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "persam/model.hpp"
#include "persam/rng.hpp"

namespace persam {

// Controls for the synthetic multimodal dataset. Classes carry distinct image
// motifs: class 0 = high-frequency checker texture, class 1 = ring structures,
// class 2 = background only. Typical cases show the motif of their own class
// at strong contrast; atypical cases show a weak-contrast motif that matches
// the label only with probability visible_match_prob, and the clinical record
// carries the bit that resolves the remainder.
struct GenConfig {
    std::size_t cases = 300;
    std::size_t num_classes = 3;
    double atypical_fraction = 0.5;
    std::size_t pool_size = 30;
    std::size_t patch_size = 16;
    std::size_t patch_channels = 3;

    double background_level = 0.5;
    double background_noise = 0.08;
    double amp_strong = 0.30;
    double amp_weak = 0.05;
    double typical_evidence_lo = 0.30;
    double typical_evidence_hi = 0.60;
    double atypical_evidence_frac = 0.10;
    double visible_match_prob = 0.75;

    // Clinical record structure (factor 1: 18-dim profile/interview analog,
    // factor 2: 10-dim continuous blood-test analog).
    double indicator_flip = 0.32;
    double blood_shift = 0.7;
    bool informative_records = true;

    std::string to_json() const;
    static GenConfig from_json(const std::string& text);
};

// Index of the record bit that disambiguates atypical cases (within factor 1).
constexpr std::size_t kDisambiguatingBit = 4;

// For an atypical case, the label determined by the visible motif and the
// disambiguating record bit.
int atypical_label(int visible_motif, int bit, int num_classes);

struct SyntheticCase {
    int id = 0;
    int label = 0;
    bool atypical = false;
    int visible_motif = 0;  // == label for typical cases
    std::vector<float> patches;  // pool_size * ch * S * S, CHW per patch
    std::vector<float> factor1;  // 18 entries; [0] integer age analog, rest binary
    std::vector<float> factor2;  // 10 continuous entries
    std::vector<std::uint8_t> evidence;  // per pool patch

    bool operator==(const SyntheticCase&) const = default;
};

struct SynthDataset {
    GenConfig config;
    std::uint64_t seed = 0;
    std::vector<SyntheticCase> cases;
};

SyntheticCase generate_case(const GenConfig& cfg, int id, int label, bool atypical,
                            Rng rng);
SynthDataset generate_dataset(const GenConfig& cfg, std::uint64_t seed);

struct BagSample {
    std::vector<std::size_t> indices;  // distinct, into the case pool
};

std::vector<BagSample> sample_bags(const SyntheticCase& c, std::size_t n_bags,
                                   std::size_t bag_size, Rng& rng);

// Converts one sampled bag to model inputs (f64 tensors, age rescaled).
Bag make_bag(const SyntheticCase& c, const BagSample& sample);
// Same, with the clinical record taken from a different case.
Bag make_bag_with_record(const SyntheticCase& c, const BagSample& sample,
                         const SyntheticCase& record_source);

// Train-time augmentation: random horizontal flip and 0/90/180/270 rotation.
Tensor augment_patch(const Tensor& patch, Rng& rng);

struct FoldSplit {
    std::vector<int> train, val, test;  // case indices into dataset.cases
};

// Stratified k-fold split with train:val:test = (k-2):1:1 per class.
std::vector<FoldSplit> split_folds(const SynthDataset& ds, std::size_t k, Rng& rng);

// Directory with manifest.json + data.bin (little-endian f32 blob).
void save_dataset(const SynthDataset& ds, const std::string& dir);
SynthDataset load_dataset(const std::string& dir);

}  // namespace persam
