#include "persam/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "persam/errors.hpp"

namespace persam {

double OptimConfig::schedule_factor(int epoch) const {
    if (!schedule) return 1.0;
    const int blocks = (epoch - 1) / decay_every;
    double f = 1.0;
    for (int i = 0; i < blocks; ++i) f *= decay;
    return f;
}

SgdOptimizer::SgdOptimizer(ParameterStore& store, OptimConfig cfg)
    : store_(&store), cfg_(cfg) {
    velocity_.reserve(store.all().size());
    for (const auto& p : store.all()) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void SgdOptimizer::step(int epoch) {
    for (std::size_t i = 0; i < store_->all().size(); ++i) {
        auto& p = store_->all()[i];
        const double lr = cfg_.lr(p.group, epoch);
        auto& w = p.tensor.mutable_data();
        const auto& g = p.tensor.grad();
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double grad = g[j] + cfg_.weight_decay * w[j];
            v[j] = cfg_.momentum * v[j] + grad;
            const double update = cfg_.nesterov ? grad + cfg_.momentum * v[j] : v[j];
            w[j] -= lr * update;
        }
        p.tensor.zero_grad();
    }
}

Checkpoint snapshot_params(const BagModel& model, int epoch, double val_loss,
                           std::uint64_t rng_state, std::uint64_t init_seed) {
    Checkpoint c;
    c.model_name = model.name();
    c.config = model.config();
    c.epoch = epoch;
    c.val_loss = val_loss;
    c.rng_state = rng_state;
    c.init_seed = init_seed;
    for (const auto& p : model.params().all())
        c.entries.push_back({p.name, p.group, p.tensor.shape(), p.tensor.data()});
    return c;
}

void restore_params(BagModel& model, const Checkpoint& ckpt) {
    for (const auto& e : ckpt.entries) {
        auto& p = const_cast<Parameter&>(model.params().find(e.name));
        if (p.tensor.shape() != e.shape)
            throw ShapeError("checkpoint entry '" + e.name + "' has shape " +
                             shape_str(e.shape) + ", model expects " +
                             shape_str(p.tensor.shape()));
        p.tensor.mutable_data() = e.data;
    }
}

std::vector<CaseBags> build_case_bags(const SynthDataset& ds, const std::vector<int>& cases,
                                      std::size_t bags_per_case, std::size_t bag_size,
                                      std::uint64_t seed) {
    std::vector<CaseBags> out;
    out.reserve(cases.size());
    Rng root(seed);
    for (int ci : cases) {
        const auto& c = ds.cases[ci];
        Rng rng = root.fork(static_cast<std::uint64_t>(c.id));
        CaseBags cb;
        cb.case_index = ci;
        for (const auto& sample : sample_bags(c, bags_per_case, bag_size, rng))
            cb.bags.push_back(make_bag(c, sample));
        out.push_back(std::move(cb));
    }
    return out;
}

int select_model(const std::vector<EpochRecord>& history) {
    if (history.size() < 4)
        throw ContractError("select_model: need at least 4 epochs, got " +
                            std::to_string(history.size()));
    int best = -1;
    double best_loss = 0.0;
    for (const auto& rec : history) {
        if (rec.epoch < 4) continue;
        if (best < 0 || rec.val_loss < best_loss) {
            best = rec.epoch;
            best_loss = rec.val_loss;
        }
    }
    if (best < 0) throw ContractError("select_model: no epoch after the third recorded");
    return best;
}

int eval_workers_from_env() {
    const char* env = std::getenv("PERSAM_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n > 0 ? n : 1;
}

EvalResult evaluate(BagModel& model, const std::vector<CaseBags>& case_bags, int workers) {
    if (workers <= 0) workers = eval_workers_from_env();
    const std::size_t classes = model.config().num_classes;

    // Flatten (case, bag) pairs; each forward is independent of the others.
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t i = 0; i < case_bags.size(); ++i)
        for (std::size_t b = 0; b < case_bags[i].bags.size(); ++b) jobs.emplace_back(i, b);

    std::vector<std::vector<double>> bag_probs(jobs.size());
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        Rng rng(0);
        for (std::size_t j = lo; j < hi; ++j) {
            const auto& bag = case_bags[jobs[j].first].bags[jobs[j].second];
            bag_probs[j] = model.predict(bag, rng, /*training=*/false).data();
        }
    };
    const int n_workers = std::min<int>(workers, std::max<std::size_t>(jobs.size(), 1));
    if (n_workers <= 1) {
        run_range(0, jobs.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (jobs.size() + n_workers - 1) / n_workers;
        for (int w = 0; w < n_workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(jobs.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(run_range, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    EvalResult res;
    std::size_t correct = 0;
    std::size_t job_at = 0;
    for (const auto& cb : case_bags) {
        CaseResult cr;
        cr.case_index = cb.case_index;
        cr.label = cb.bags.empty() ? 0 : cb.bags.front().label;
        cr.mean_probs.assign(classes, 0.0);
        for (std::size_t b = 0; b < cb.bags.size(); ++b, ++job_at)
            for (std::size_t c = 0; c < classes; ++c)
                cr.mean_probs[c] += bag_probs[job_at][c];
        for (auto& v : cr.mean_probs) v /= static_cast<double>(cb.bags.size());
        cr.predicted = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (cr.mean_probs[c] > cr.mean_probs[cr.predicted])
                cr.predicted = static_cast<int>(c);  // ties keep the lowest index
        if (cr.predicted == cr.label) ++correct;
        res.cases.push_back(std::move(cr));
    }
    res.accuracy = case_bags.empty()
                       ? 0.0
                       : static_cast<double>(correct) / static_cast<double>(case_bags.size());
    return res;
}

namespace {

double mean_val_loss(BagModel& model, const std::vector<CaseBags>& val_bags) {
    Rng rng(0);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& cb : val_bags)
        for (const auto& bag : cb.bags) {
            total += model.loss(bag, rng, /*training=*/false).item();
            ++n;
        }
    return n ? total / static_cast<double>(n) : 0.0;
}

void log_record(std::ostream* os, int epoch, const char* split, double loss,
                double accuracy) {
    if (!os) return;
    nlohmann::json j{{"epoch", epoch}, {"split", split}, {"loss", loss},
                     {"accuracy", accuracy}};
    (*os) << j.dump() << "\n";
}

}  // namespace

TrainResult train(BagModel& model, const SynthDataset& ds, const FoldSplit& fold,
                  const TrainOptions& opts) {
    if (fold.train.empty() || fold.val.empty())
        throw ContractError("train: fold must have nonempty train and val sets");
    const std::size_t bags_per_case = std::min(opts.bags_per_case, opts.max_bags_per_case);

    auto train_bags =
        build_case_bags(ds, fold.train, bags_per_case, opts.bag_size, opts.seed ^ 0x7261696eull);
    auto val_bags =
        build_case_bags(ds, fold.val, bags_per_case, opts.bag_size, opts.seed ^ 0x76616cull);

    std::vector<const Bag*> flat;
    for (const auto& cb : train_bags)
        for (const auto& bag : cb.bags) flat.push_back(&bag);

    Rng order_rng(opts.seed ^ 0x6f72646572ull);
    Rng dropout_rng(opts.seed ^ 0x64726f70ull);
    Rng augment_rng(opts.seed ^ 0x617567ull);

    SgdOptimizer optimizer(model.params(), opts.optim);
    TrainResult result;
    int global_step = 0;

    for (int epoch = 1; epoch <= opts.optim.epochs; ++epoch) {
        auto perm = order_rng.permutation(flat.size());
        double epoch_loss = 0.0;
        std::size_t since_step = 0;
        model.params().zero_grads();
        for (std::size_t i = 0; i < perm.size(); ++i) {
            const Bag* bag = flat[perm[i]];
            Bag augmented;
            if (opts.augment) {
                augmented = *bag;
                for (auto& p : augmented.patches) p = augment_patch(p, augment_rng);
                bag = &augmented;
            }
            Tensor loss = model.loss(*bag, dropout_rng, /*training=*/true);
            double value = loss.item();
            if (global_step == opts.inject_nan_at_step)
                value = std::numeric_limits<double>::quiet_NaN();
            if (!std::isfinite(value))
                throw NumericError("non-finite training loss", epoch,
                                   static_cast<int>(i), "total_loss");
            epoch_loss += value;
            loss.backward();
            ++since_step;
            ++global_step;
            if (since_step >= opts.grad_accumulation) {
                optimizer.step(epoch);
                since_step = 0;
            }
        }
        if (since_step > 0) optimizer.step(epoch);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = flat.empty() ? 0.0 : epoch_loss / static_cast<double>(flat.size());
        rec.val_loss = mean_val_loss(model, val_bags);
        rec.val_accuracy = evaluate(model, val_bags, 1).accuracy;
        log_record(opts.log, epoch, "train", rec.train_loss, -1.0);
        log_record(opts.log, epoch, "val", rec.val_loss, rec.val_accuracy);
        result.history.push_back(rec);

        if (epoch >= 4) {
            if (result.best_epoch == 0 || rec.val_loss < result.best.val_loss) {
                result.best_epoch = epoch;
                result.best = snapshot_params(model, epoch, rec.val_loss,
                                              dropout_rng.state(), opts.seed);
            }
        }
    }
    if (result.best_epoch == 0 && !result.history.empty()) {
        // Fewer than four epochs configured: fall back to the last one.
        const auto& rec = result.history.back();
        result.best_epoch = rec.epoch;
        result.best =
            snapshot_params(model, rec.epoch, rec.val_loss, dropout_rng.state(), opts.seed);
    }
    return result;
}

CVRow cross_validate_model(const std::string& name, const ModelFactory& factory,
                           const SynthDataset& ds, const std::vector<FoldSplit>& folds,
                           const TrainOptions& opts) {
    CVRow row;
    row.model = name;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        auto model = factory(opts.seed + f);
        TrainResult tr = train(*model, ds, folds[f], opts);
        restore_params(*model, tr.best);
        auto test_bags = build_case_bags(ds, folds[f].test, opts.bags_per_case,
                                         opts.bag_size, opts.seed ^ 0x74657374ull);
        row.fold_accuracies.push_back(evaluate(*model, test_bags).accuracy);
    }
    const std::size_t k = row.fold_accuracies.size();
    double mean = 0.0;
    for (double a : row.fold_accuracies) mean += a;
    mean /= static_cast<double>(k);
    row.mean_accuracy = mean;
    if (k < 2) {
        row.stderr_accuracy = 0.0;
        row.stderr_defined = false;
    } else {
        double ss = 0.0;
        for (double a : row.fold_accuracies) ss += (a - mean) * (a - mean);
        row.stderr_accuracy = std::sqrt(ss / static_cast<double>(k - 1)) /
                              std::sqrt(static_cast<double>(k));
    }
    return row;
}

std::string format_cv_table(const std::vector<CVRow>& rows) {
    std::ostringstream os;
    os << "Method                      Accuracy\n";
    os << "------------------------------------\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-26s %.4f +/- %.4f%s\n", r.model.c_str(),
                      r.mean_accuracy, r.stderr_accuracy,
                      r.stderr_defined ? "" : " (stderr undefined: single fold)");
        os << buf;
    }
    return os.str();
}

}  // namespace persam
