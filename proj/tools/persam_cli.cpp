// Command-line surface: dataset generation, training, evaluation, attention
// export, and gradient checking.
//
// Exit codes: 0 ok, 2 usage/input error, 3 numeric failure during
// optimization, 4 gradient-check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "persam/baselines.hpp"
#include "persam/data_synth.hpp"
#include "persam/errors.hpp"
#include "persam/gradcheck.hpp"
#include "persam/report.hpp"
#include "persam/training.hpp"

namespace fs = std::filesystem;
using namespace persam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitGradcheck = 4;

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

ModelConfig resolve_model_config(const std::string& spec) {
    if (spec.empty()) return ModelConfig::desk();
    if (spec == "paper" || spec == "desk" || spec == "tiny") return ModelConfig::preset(spec);
    return model_config_from_json(read_file(spec));
}

const std::vector<std::string> kAllModels = {
    "clinical-mlp", "img-mil", "img-clinical-mil", "img-transformer",
    "img-clinical-transformer", "persam"};

// Clinical MLP trains with its own flat schedule; everything else shares the
// standard one.
TrainOptions options_for(const std::string& model, const TrainOptions& base) {
    TrainOptions opts = base;
    if (model == "clinical-mlp") {
        opts.optim.schedule = false;
        opts.optim.epochs = 500;
        opts.optim.lr_extractor = 1e-3;
        opts.optim.lr_clinical = 1e-3;
        opts.optim.lr_encoder = 1e-3;
        opts.optim.lr_aggregator = 1e-3;
        opts.optim.lr_classifier = 1e-3;
        // one record per case; bag count is irrelevant but costs time
        opts.bags_per_case = 1;
    }
    return opts;
}

int cmd_gen(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
    GenConfig cfg;
    if (!spec_path.empty()) cfg = GenConfig::from_json(read_file(spec_path));
    SynthDataset ds = generate_dataset(cfg, seed);
    save_dataset(ds, out);

    std::vector<std::size_t> per_class(cfg.num_classes, 0), atypical(cfg.num_classes, 0);
    for (const auto& c : ds.cases) {
        ++per_class[c.label];
        if (c.atypical) ++atypical[c.label];
    }
    std::cout << "wrote " << ds.cases.size() << " cases to " << out << "\n";
    for (std::size_t c = 0; c < per_class.size(); ++c)
        std::cout << "  class " << c << ": " << per_class[c] << " cases (" << atypical[c]
                  << " atypical)\n";
    return kExitOk;
}

int run_training(const std::string& data_dir, const std::string& config_spec,
                 const std::string& out, const std::vector<std::string>& models, bool cv,
                 int fold_index, std::size_t k_folds, TrainOptions base_opts) {
    SynthDataset ds = load_dataset(data_dir);
    ModelConfig mcfg = resolve_model_config(config_spec);
    base_opts.bag_size = mcfg.bag_size;
    Rng fold_rng(base_opts.seed ^ 0x666f6c64ull);
    auto folds = split_folds(ds, k_folds, fold_rng);

    fs::create_directories(out);
    std::ofstream log(fs::path(out) / "train_log.jsonl", std::ios::binary);
    std::vector<std::string> produced = {"train_log.jsonl"};

    std::vector<CVRow> rows;
    for (const auto& model_name : models) {
        TrainOptions opts = options_for(model_name, base_opts);
        opts.log = &log;
        auto factory = [&](std::uint64_t seed) { return build_model(model_name, mcfg, seed); };
        if (cv) {
            rows.push_back(cross_validate_model(model_name, factory, ds, folds, opts));
        } else {
            auto model = factory(opts.seed);
            TrainResult tr = train(*model, ds, folds[fold_index], opts);
            tr.best.fold = fold_index;
            tr.best.split_seed = base_opts.seed;
            tr.best.bags_per_case = opts.bags_per_case;
            tr.best.bag_size = opts.bag_size;
            const std::string ckpt_dir =
                (fs::path(out) / (model_name + "-fold" + std::to_string(fold_index)))
                    .string();
            save_checkpoint(tr.best, ckpt_dir);
            produced.push_back(model_name + "-fold" + std::to_string(fold_index) +
                               "/checkpoint.json");
            produced.push_back(model_name + "-fold" + std::to_string(fold_index) +
                               "/params.bin");

            restore_params(*model, tr.best);
            auto test_bags = build_case_bags(ds, folds[fold_index].test, opts.bags_per_case,
                                             opts.bag_size, opts.seed ^ 0x74657374ull);
            CVRow row;
            row.model = model_name;
            row.fold_accuracies = {evaluate(*model, test_bags).accuracy};
            row.mean_accuracy = row.fold_accuracies[0];
            row.stderr_defined = false;
            rows.push_back(row);
            std::cout << model_name << ": best epoch " << tr.best_epoch << ", val loss "
                      << tr.best.val_loss << "\n";
        }
    }

    const std::string table = format_cv_table(rows);
    std::cout << table;
    std::ofstream rep(fs::path(out) / "report.txt", std::ios::binary);
    rep << table;
    produced.push_back("report.txt");
    write_output_manifest(out, produced);
    return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_dir,
             const std::string& out) {
    SynthDataset ds = load_dataset(data_dir);
    Checkpoint ckpt = load_checkpoint(ckpt_dir);
    auto model = build_model(ckpt.model_name, ckpt.config, ckpt.init_seed);
    restore_params(*model, ckpt);

    Rng fold_rng(ckpt.split_seed ^ 0x666f6c64ull);
    auto folds = split_folds(ds, 5, fold_rng);
    if (ckpt.fold < 0 || ckpt.fold >= static_cast<int>(folds.size()))
        throw ConfigError("checkpoint fold index " + std::to_string(ckpt.fold) +
                          " out of range");
    const auto& fold = folds[ckpt.fold];

    auto val_bags = build_case_bags(ds, fold.val, ckpt.bags_per_case, ckpt.bag_size,
                                    ckpt.split_seed ^ 0x76616cull);
    double val_loss = 0.0;
    std::size_t n = 0;
    Rng rng(0);
    for (const auto& cb : val_bags)
        for (const auto& bag : cb.bags) {
            val_loss += model->loss(bag, rng, false).item();
            ++n;
        }
    val_loss /= static_cast<double>(n);

    auto test_bags = build_case_bags(ds, fold.test, ckpt.bags_per_case, ckpt.bag_size,
                                     ckpt.split_seed ^ 0x74657374ull);
    EvalResult res = evaluate(*model, test_bags);

    std::printf("model %s fold %d: val loss %.9f (recorded %.9f), test accuracy %.4f\n",
                ckpt.model_name.c_str(), ckpt.fold, val_loss, ckpt.val_loss, res.accuracy);
    if (!out.empty()) {
        fs::create_directories(out);
        nlohmann::json j{{"model", ckpt.model_name},
                         {"fold", ckpt.fold},
                         {"val_loss", val_loss},
                         {"recorded_val_loss", ckpt.val_loss},
                         {"test_accuracy", res.accuracy}};
        std::ofstream f(fs::path(out) / "eval.json", std::ios::binary);
        f << j.dump(2) << "\n";
        write_output_manifest(out, {"eval.json"});
    }
    return kExitOk;
}

int cmd_attend(const std::string& data_dir, const std::string& ckpt_dir, int case_id,
               const std::string& swap, const std::string& out) {
    SynthDataset ds = load_dataset(data_dir);
    Checkpoint ckpt = load_checkpoint(ckpt_dir);
    if (ckpt.model_name != "persam")
        throw ConfigError("attention export requires a persam checkpoint, got '" +
                          ckpt.model_name + "'");
    PersamModel model(ckpt.config, ckpt.init_seed);
    restore_params(model, ckpt);

    const SyntheticCase* target = nullptr;
    for (const auto& c : ds.cases)
        if (c.id == case_id) target = &c;
    if (!target) throw ConfigError("unknown case id " + std::to_string(case_id));

    Rng bag_rng = Rng(ckpt.split_seed ^ 0x617474656eull).fork(case_id);
    BagSample sample =
        sample_bags(*target, 1, ckpt.bag_size ? ckpt.bag_size : ckpt.config.bag_size,
                    bag_rng)[0];

    fs::create_directories(out);
    std::vector<std::string> produced;
    auto emit = [&](const Bag& bag, const std::string& source, const std::string& stem) {
        AttentionReport rep = attention_report(model, bag, source);
        auto files = write_report_outputs(rep, out, stem);
        produced.insert(produced.end(), files.begin(), files.end());
    };

    emit(make_bag(*target, sample), "original", "case" + std::to_string(case_id));

    if (!swap.empty()) {
        std::vector<const SyntheticCase*> donors;
        if (swap == "class") {
            for (std::size_t cls = 0; cls < ds.config.num_classes; ++cls) {
                for (const auto& c : ds.cases)
                    if (c.label == static_cast<int>(cls) && c.id != case_id) {
                        donors.push_back(&c);
                        break;
                    }
            }
        } else {
            const int donor_id = std::stoi(swap);
            const SyntheticCase* donor = nullptr;
            for (const auto& c : ds.cases)
                if (c.id == donor_id) donor = &c;
            if (!donor) throw ConfigError("unknown donor case id " + swap);
            donors.push_back(donor);
        }
        for (const SyntheticCase* donor : donors)
            emit(make_bag_with_record(*target, sample, *donor),
                 "case-" + std::to_string(donor->id),
                 "case" + std::to_string(case_id) + "_swap" + std::to_string(donor->id));
    }
    write_output_manifest(out, produced);
    std::cout << "wrote " << produced.size() << " files to " << out << "\n";
    return kExitOk;
}

int cmd_gradcheck(const std::string& config_spec, std::uint64_t seed, bool corrupt) {
    ModelConfig cfg = config_spec.empty() ? ModelConfig::tiny() : resolve_model_config(config_spec);
    PersamModel model(cfg, seed);
    std::vector<Bag> bags = {random_bag(cfg, seed ^ 0xba6ull)};

    testing::corrupt_sigmoid_backward = corrupt;
    GradCheckResult res = gradient_check(model, bags);
    testing::corrupt_sigmoid_backward = false;

    for (const auto& g : res.groups)
        std::printf("group %-10s max rel err %.3e  (worst: %s)\n", g.group.c_str(),
                    g.max_rel_err, g.worst_param.empty() ? "-" : g.worst_param.c_str());
    if (!res.pass()) {
        std::printf("FAIL: gradient check exceeded 1e-4 in:");
        for (const auto& o : res.offenders()) std::printf(" %s", o.c_str());
        std::printf("\n");
        return kExitGradcheck;
    }
    std::printf("OK: all parameter groups below 1e-4\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multimodal MIL with personalized attention"};
    app.require_subcommand(1);

    std::string spec_path, out, data_dir, config_spec, ckpt_dir, model_arg, swap;
    std::uint64_t seed = 0;
    int fold_index = 0, case_id = -1, inject_nan = -1;
    std::size_t k_folds = 5, bags_per_case = 4;
    bool cv = false, all_models = false, augment = false, corrupt = false;

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--spec", spec_path, "generator config JSON");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train one model or run cross-validation");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--config", config_spec, "model config preset name or JSON file");
    tr->add_option("--out", out, "output directory")->required();
    tr->add_option("--model", model_arg, "model kind (default persam)");
    tr->add_flag("--all-models", all_models, "train every model kind");
    tr->add_flag("--cv", cv, "run full k-fold cross-validation");
    tr->add_option("--fold", fold_index, "fold index for single-fold training");
    tr->add_option("--folds", k_folds, "number of folds");
    tr->add_option("--seed", seed, "training seed");
    tr->add_option("--bags", bags_per_case, "bags sampled per case");
    tr->add_flag("--augment", augment, "random flips/rotations on training patches");
    tr->add_option("--inject-nan", inject_nan, "test hook: force NaN loss at step")
        ->group("");

    auto* ev = app.add_subcommand("eval", "evaluate a saved checkpoint");
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    ev->add_option("--out", out, "output directory");

    auto* at = app.add_subcommand("attend", "export attention reports and heatmaps");
    at->add_option("--data", data_dir, "dataset directory")->required();
    at->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    at->add_option("--case", case_id, "case id")->required();
    at->add_option("--swap-record", swap, "donor case id or 'class'");
    at->add_option("--out", out, "output directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc->add_option("--config", config_spec, "model config preset name or JSON file");
    gc->add_option("--seed", seed, "model/bag seed");
    gc->add_flag("--corrupt-backward", corrupt, "test hook: corrupt one backward rule")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen(spec_path, seed, out);
        if (tr->parsed()) {
            std::vector<std::string> models;
            if (all_models) models = kAllModels;
            else models = {model_arg.empty() ? "persam" : model_arg};
            TrainOptions opts;
            opts.seed = seed;
            opts.bags_per_case = bags_per_case;
            opts.augment = augment;
            opts.inject_nan_at_step = inject_nan;
            return run_training(data_dir, config_spec, out, models, cv, fold_index, k_folds,
                                opts);
        }
        if (ev->parsed()) return cmd_eval(data_dir, ckpt_dir, out);
        if (at->parsed()) return cmd_attend(data_dir, ckpt_dir, case_id, swap, out);
        if (gc->parsed()) return cmd_gradcheck(config_spec, seed, corrupt);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
