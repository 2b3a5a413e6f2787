#pragma once

#include <string>
#include <vector>

#include "persam/model.hpp"

namespace persam {

struct GradCheckResult {
    struct GroupStat {
        std::string group;
        double max_rel_err = 0.0;
        std::string worst_param;
    };
    std::vector<GroupStat> groups;
    double max_rel_err = 0.0;

    bool pass(double threshold = 1e-4) const { return max_rel_err < threshold; }
    std::vector<std::string> offenders(double threshold = 1e-4) const {
        std::vector<std::string> out;
        for (const auto& g : groups)
            if (g.max_rel_err >= threshold) out.push_back(g.group + ":" + g.worst_param);
        return out;
    }
};

// Central-difference check of the analytic gradient of the summed bag loss
// with respect to every parameter in the store. Relative error per element is
// |a - n| / max(|a|, |n|, 1e-4); the floor absorbs FD roundoff on near-zero
// entries.
GradCheckResult gradient_check(BagModel& model, const std::vector<Bag>& bags,
                               double step = 1e-6);

// Random synthetic bag matching the model geometry (for checks that need no
// generator semantics).
Bag random_bag(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace persam
