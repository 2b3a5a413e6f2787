#pragma once

// Central-difference gradient oracle used across the test suites. Kept
// independent of the autodiff backward path: it only calls forward
// evaluations of a closure.

#include <cmath>
#include <functional>
#include <vector>

#include "persam/tensor.hpp"

namespace persam::testing {

// Numeric gradient of scalar_fn with respect to the entries of `leaf`
// (perturbs leaf data in place and restores it).
inline std::vector<double> numeric_gradient(persam::Tensor leaf,
                                            const std::function<double()>& scalar_fn,
                                            double h = 1e-6) {
    std::vector<double>& w = leaf.mutable_data();
    std::vector<double> grad(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double saved = w[i];
        w[i] = saved + h;
        const double up = scalar_fn();
        w[i] = saved - h;
        const double down = scalar_fn();
        w[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

// max over entries of |a-n| / max(|a|, |n|, floor). The floor keeps
// central-difference roundoff (~1e-10 absolute at these scales) from
// registering as a large relative error on near-zero gradient entries; a
// wrong backward rule still shows up orders of magnitude above it.
inline double max_rel_err(const std::vector<double>& analytic,
                          const std::vector<double>& numeric, double floor = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double mag =
            std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / mag);
    }
    return worst;
}

// Convenience: checks d(scalar_fn)/d(leaf) against leaf.grad() after the
// caller ran backward once on a freshly built graph.
inline double check_leaf_gradient(persam::Tensor leaf,
                                  const std::function<double()>& scalar_fn,
                                  double h = 1e-6) {
    return max_rel_err(leaf.grad(), numeric_gradient(leaf, scalar_fn, h));
}

}  // namespace persam::testing
