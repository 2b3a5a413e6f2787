#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "persam/data_synth.hpp"
#include "persam/model.hpp"
#include "persam/params.hpp"

namespace persam {

// Momentum SGD (Nesterov) with per-group learning rates, uniform weight
// decay, and a step schedule that multiplies every rate by `decay` after
// each `decay_every`-epoch block.
struct OptimConfig {
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 1e-4;
    double lr_extractor = 1e-4;
    double lr_clinical = 4e-6;
    double lr_encoder = 2e-4;
    double lr_aggregator = 2e-4;
    double lr_classifier = 2e-4;
    double decay = 0.1;
    int decay_every = 3;
    int epochs = 9;
    bool schedule = true;

    double base_lr(ParamGroup g) const {
        switch (g) {
            case ParamGroup::kExtractor: return lr_extractor;
            case ParamGroup::kClinical: return lr_clinical;
            case ParamGroup::kEncoder: return lr_encoder;
            case ParamGroup::kAggregator: return lr_aggregator;
            case ParamGroup::kClassifier: return lr_classifier;
        }
        return 0.0;
    }

    // Schedule factor for a 1-indexed epoch.
    double schedule_factor(int epoch) const;
    double lr(ParamGroup g, int epoch) const { return base_lr(g) * schedule_factor(epoch); }
};

class SgdOptimizer {
public:
    SgdOptimizer(ParameterStore& store, OptimConfig cfg);
    // Applies the accumulated gradients and clears them.
    void step(int epoch);
    const OptimConfig& config() const { return cfg_; }

private:
    ParameterStore* store_;
    OptimConfig cfg_;
    std::vector<std::vector<double>> velocity_;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

// Parameter snapshot plus the bookkeeping needed to restore and audit it.
struct Checkpoint {
    std::string model_name;
    ModelConfig config;
    int epoch = 0;
    double val_loss = 0.0;
    std::uint64_t rng_state = 0;
    std::uint64_t init_seed = 0;
    // provenance of the training run, so eval can rebuild the same bags
    int fold = 0;
    std::uint64_t split_seed = 0;
    std::size_t bags_per_case = 4;
    std::size_t bag_size = 12;
    struct Entry {
        std::string name;
        ParamGroup group;
        Shape shape;
        std::vector<double> data;
    };
    std::vector<Entry> entries;
};

Checkpoint snapshot_params(const BagModel& model, int epoch, double val_loss,
                           std::uint64_t rng_state, std::uint64_t init_seed);
void restore_params(BagModel& model, const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct TrainOptions {
    OptimConfig optim;
    std::uint64_t seed = 0;
    std::size_t bags_per_case = 4;
    std::size_t max_bags_per_case = 30;
    std::size_t bag_size = 12;
    std::size_t grad_accumulation = 1;
    bool augment = false;
    int inject_nan_at_step = -1;  // test hook: forces a NaN loss at this step
    std::ostream* log = nullptr;  // line-delimited JSON records when set
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;  // 1-indexed
    Checkpoint best;
};

// Bags sampled once per case (deterministic in the seed) and reused across
// epochs.
struct CaseBags {
    int case_index = 0;
    std::vector<Bag> bags;
};

std::vector<CaseBags> build_case_bags(const SynthDataset& ds, const std::vector<int>& cases,
                                      std::size_t bags_per_case, std::size_t bag_size,
                                      std::uint64_t seed);

TrainResult train(BagModel& model, const SynthDataset& ds, const FoldSplit& fold,
                  const TrainOptions& opts);

// Smallest validation loss strictly after the third epoch; ties -> earliest.
// Throws ContractError when fewer than four epochs were recorded.
int select_model(const std::vector<EpochRecord>& history);

struct CaseResult {
    int case_index = 0;
    int label = 0;
    int predicted = 0;
    std::vector<double> mean_probs;
};

struct EvalResult {
    std::vector<CaseResult> cases;
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Per-case prediction is the argmax of the mean bag probability (ties ->
// lowest class index). Worker count is capped by PERSAM_THREADS.
EvalResult evaluate(BagModel& model, const std::vector<CaseBags>& case_bags,
                    int workers = 0);

int eval_workers_from_env();

struct CVRow {
    std::string model;
    double mean_accuracy = 0.0;
    double stderr_accuracy = 0.0;
    bool stderr_defined = true;
    std::vector<double> fold_accuracies;
};

using ModelFactory = std::function<std::unique_ptr<BagModel>(std::uint64_t seed)>;

CVRow cross_validate_model(const std::string& name, const ModelFactory& factory,
                           const SynthDataset& ds, const std::vector<FoldSplit>& folds,
                           const TrainOptions& opts);

std::string format_cv_table(const std::vector<CVRow>& rows);

}  // namespace persam
