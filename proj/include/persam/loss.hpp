#pragma once

#include <vector>

#include "persam/config.hpp"
#include "persam/tensor.hpp"

namespace persam {

struct LossConfig {
    double clamp_lo = 0.95;   // factors of the noisy-OR product live in [clamp_lo, 1]
    double smooth_pos = 0.95; // smoothed bag-level target for the true class
    double smooth_neg = 0.05;
    NoisyOrMode mode = NoisyOrMode::kRescale;
};

// -sum_c Y_c log yhat_c with the log argument clamped at 1e-12. Y is hard
// one-hot; smoothing applies only to the bag-level term.
Tensor cross_entropy(const Tensor& probs, const std::vector<double>& onehot);

// Probability that at least one patch supports the class:
// pi = 1 - prod_l g(1 - a'_l), product in log space. In rescale mode
// g(x) = lo + (1 - lo) x, which keeps pi = 0 when every attention is 0.
Tensor noisy_or(const Tensor& explanatory_col, const LossConfig& cfg);

// -[y log pi + (1-y) log(1-pi)] with both logs clamped at 1e-12.
Tensor bce(const Tensor& pi, double target);

// Per-bag objective: cross-entropy plus the mean over classes of the
// bag-level BCE against smoothed targets.
Tensor total_loss(const Tensor& probs, const std::vector<double>& onehot,
                  const std::vector<Tensor>& pis, const LossConfig& cfg);

// Convenience: the noisy-OR terms for every class column of a'.
std::vector<Tensor> noisy_or_per_class(const Tensor& explanatory, const LossConfig& cfg);

}  // namespace persam
