#include "persam/gradcheck.hpp"

#include <cmath>
#include <map>

namespace persam {

Bag random_bag(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Bag bag;
    const std::size_t s = cfg.patch_size, ch = cfg.patch_channels;
    for (std::size_t l = 0; l < cfg.bag_size; ++l) {
        std::vector<double> px(ch * s * s);
        for (auto& v : px) v = rng.uniform();
        bag.patches.emplace_back(Shape{ch, s, s}, std::move(px));
        bag.evidence.push_back(rng.bernoulli(0.3));
    }
    for (std::size_t m = 0; m < cfg.num_factors; ++m) {
        std::vector<double> f(cfg.factor_dims[m]);
        for (auto& v : f) v = rng.uniform();
        bag.factors.push_back(std::move(f));
    }
    bag.label = rng.uniform_int(0, static_cast<int>(cfg.num_classes) - 1);
    return bag;
}

GradCheckResult gradient_check(BagModel& model, const std::vector<Bag>& bags, double step) {
    auto total = [&]() {
        Rng rng(0);
        double s = 0.0;
        for (const auto& bag : bags) s += model.loss(bag, rng, /*training=*/false).item();
        return s;
    };

    // Analytic pass.
    model.params().zero_grads();
    {
        Rng rng(0);
        for (const auto& bag : bags) model.loss(bag, rng, /*training=*/false).backward();
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(model.params().all().size());
    for (const auto& p : model.params().all()) analytic.push_back(p.tensor.grad());

    std::map<std::string, GradCheckResult::GroupStat> stats;
    for (const auto& p : model.params().all()) {
        auto& st = stats[param_group_name(p.group)];
        st.group = param_group_name(p.group);
    }

    GradCheckResult result;
    for (std::size_t pi = 0; pi < model.params().all().size(); ++pi) {
        auto& p = model.params().all()[pi];
        auto& w = p.tensor.mutable_data();
        auto& st = stats[param_group_name(p.group)];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double saved = w[j];
            w[j] = saved + step;
            const double up = total();
            w[j] = saved - step;
            const double down = total();
            w[j] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][j];
            // magnitude floor keeps FD roundoff on near-zero entries from
            // reading as a large relative error
            const double mag = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
            const double rel = std::fabs(a - numeric) / mag;
            if (rel > st.max_rel_err) {
                st.max_rel_err = rel;
                st.worst_param = p.name + "[" + std::to_string(j) + "]";
            }
        }
    }
    for (auto& [name, st] : stats) {
        result.groups.push_back(st);
        result.max_rel_err = std::max(result.max_rel_err, st.max_rel_err);
    }
    return result;
}

}  // namespace persam
