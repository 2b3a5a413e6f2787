#include "persam/loss.hpp"

#include "persam/errors.hpp"

namespace persam {

Tensor cross_entropy(const Tensor& probs, const std::vector<double>& onehot) {
    if (probs.numel() != onehot.size())
        throw ShapeError("cross_entropy: got " + std::to_string(onehot.size()) +
                         " targets for " + shape_str(probs.shape()));
    Tensor flat = probs.shape().size() == 1 ? probs : reshape(probs, {probs.numel()});
    Tensor logp = log(clamp_min(flat, 1e-12));
    Tensor y({onehot.size()}, onehot);
    return neg(sum_all(mul(logp, y)));
}

Tensor noisy_or(const Tensor& explanatory_col, const LossConfig& cfg) {
    Tensor one_minus = rsub_scalar(1.0, explanatory_col);
    Tensor factors;
    if (cfg.mode == NoisyOrMode::kRescale)
        factors = add_scalar(mul_scalar(one_minus, 1.0 - cfg.clamp_lo), cfg.clamp_lo);
    else
        factors = maximum(one_minus, Tensor::full(one_minus.shape(), cfg.clamp_lo));
    Tensor log_prod = sum_all(log(clamp_min(factors, 1e-12)));
    return rsub_scalar(1.0, exp(log_prod));
}

Tensor bce(const Tensor& pi, double target) {
    if (pi.numel() != 1)
        throw ShapeError("bce: pi must be scalar, got " + shape_str(pi.shape()));
    Tensor term_pos = log(clamp_min(pi, 1e-12));
    Tensor term_neg = log(clamp_min(rsub_scalar(1.0, pi), 1e-12));
    return neg(add(mul_scalar(term_pos, target), mul_scalar(term_neg, 1.0 - target)));
}

std::vector<Tensor> noisy_or_per_class(const Tensor& explanatory, const LossConfig& cfg) {
    std::vector<Tensor> pis;
    const std::size_t c = explanatory.cols();
    pis.reserve(c);
    for (std::size_t j = 0; j < c; ++j)
        pis.push_back(noisy_or(slice_cols(explanatory, j, j + 1), cfg));
    return pis;
}

Tensor total_loss(const Tensor& probs, const std::vector<double>& onehot,
                  const std::vector<Tensor>& pis, const LossConfig& cfg) {
    if (pis.size() != onehot.size())
        throw ShapeError("total_loss: " + std::to_string(pis.size()) +
                         " noisy-OR terms for " + std::to_string(onehot.size()) +
                         " classes");
    Tensor loss = cross_entropy(probs, onehot);
    Tensor bag_terms;
    for (std::size_t c = 0; c < pis.size(); ++c) {
        const double target = onehot[c] > 0.5 ? cfg.smooth_pos : cfg.smooth_neg;
        Tensor term = bce(pis[c], target);
        bag_terms = c == 0 ? term : add(bag_terms, term);
    }
    return add(loss, mul_scalar(bag_terms, 1.0 / static_cast<double>(pis.size())));
}

}  // namespace persam
