#include <doctest.h>

#include <cmath>

#include "persam/errors.hpp"
#include "persam/loss.hpp"
#include "testing/finite_diff.hpp"

using namespace persam;

TEST_CASE("cross entropy analytic values") {
    CHECK(cross_entropy(Tensor({3}, {1.0, 0.0, 0.0}), {1, 0, 0}).item() ==
          doctest::Approx(0.0));
    const double third = 1.0 / 3.0;
    CHECK(cross_entropy(Tensor({3}, {third, third, third}), {0, 1, 0}).item() ==
          doctest::Approx(std::log(3.0)));
    CHECK(cross_entropy(Tensor({3}, {0.5, 0.3, 0.2}), {1, 0, 0}).item() ==
          doctest::Approx(std::log(2.0)));
}

TEST_CASE("noisy-OR hand-computed oracle values") {
    LossConfig cfg;

    // all attentions zero: every factor maps to exactly 1, so pi = 0
    CHECK(noisy_or(Tensor({3, 1}, {0.0, 0.0, 0.0}), cfg).item() == doctest::Approx(0.0));

    // L=2, a' = (0.5, 0.5): factors 0.975^2 -> pi = 0.049375
    CHECK(noisy_or(Tensor({2, 1}, {0.5, 0.5}), cfg).item() ==
          doctest::Approx(0.049375).epsilon(1e-9));

    // L=100, all ones: pi = 1 - 0.95^100, the attainable maximum
    Tensor ones = Tensor::ones({100, 1});
    const double expected = 1.0 - std::pow(0.95, 100);
    CHECK(noisy_or(ones, cfg).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(noisy_or(ones, cfg).item() == doctest::Approx(0.994079).epsilon(1e-6));
}

TEST_CASE("noisy-OR rescale vs clamp-max readings differ away from the endpoints") {
    LossConfig rescale;
    LossConfig clamp;
    clamp.mode = NoisyOrMode::kClampMax;
    Tensor col({2, 1}, {0.5, 0.5});
    const double pi_rescale = noisy_or(col, rescale).item();
    const double pi_clamp = noisy_or(col, clamp).item();
    CHECK(pi_rescale == doctest::Approx(0.049375));
    CHECK(pi_clamp == doctest::Approx(1.0 - 0.95 * 0.95));
    CHECK(pi_rescale != pi_clamp);
    // both preserve pi = 0 at zero attention
    Tensor zeros = Tensor::zeros({4, 1});
    CHECK(noisy_or(zeros, rescale).item() == doctest::Approx(0.0));
    CHECK(noisy_or(zeros, clamp).item() == doctest::Approx(0.0));
}

TEST_CASE("noisy-OR bounds and monotonicity") {
    LossConfig cfg;
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t l = 1 + rng.uniform_index(100);
        std::vector<double> a(l);
        for (auto& v : a) v = rng.uniform(0.0, 1.0);
        const double pi = noisy_or(Tensor({l, 1}, a), cfg).item();
        CHECK(pi >= 0.0);
        CHECK(pi <= 1.0 - std::pow(0.95, static_cast<double>(l)) + 1e-12);

        // raising one attention never lowers pi
        std::size_t idx = rng.uniform_index(l);
        auto raised = a;
        raised[idx] = std::min(1.0, raised[idx] + 0.1);
        const double pi_up = noisy_or(Tensor({l, 1}, raised), cfg).item();
        CHECK(pi_up >= pi - 1e-15);
    }

    // appending a patch never decreases pi
    std::vector<double> base = {0.2, 0.7};
    auto extended = base;
    extended.push_back(0.3);
    CHECK(noisy_or(Tensor({3, 1}, extended), cfg).item() >=
          noisy_or(Tensor({2, 1}, base), cfg).item());
}

TEST_CASE("bce oracle values and symmetry") {
    const double expected = -(0.95 * std::log(0.95) + 0.05 * std::log(0.05));
    CHECK(expected == doctest::Approx(0.198515).epsilon(1e-6));
    CHECK(bce(Tensor({1}, {0.95}), 0.95).item() == doctest::Approx(expected).epsilon(1e-12));
    // same value by symmetry of the expression
    CHECK(bce(Tensor({1}, {0.05}), 0.05).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bce is minimized at pi = y (grid sweep)") {
    const double target = 0.95;
    double best_pi = -1.0, best = 1e300;
    for (int i = 1; i < 1000; ++i) {
        const double pi = static_cast<double>(i) / 1000.0;
        const double v = bce(Tensor({1}, {pi}), target).item();
        if (v < best) {
            best = v;
            best_pi = pi;
        }
    }
    CHECK(best_pi == doctest::Approx(target).epsilon(1e-9));
}

TEST_CASE("total loss: smoothing floor, linear composition") {
    LossConfig cfg;
    // force both components to their minima: exact one-hot prediction and
    // pi_c equal to the smoothed targets
    Tensor probs({3}, {1.0, 0.0, 0.0});
    std::vector<Tensor> pis = {Tensor({1}, {0.95}), Tensor({1}, {0.05}),
                               Tensor({1}, {0.05})};
    const double floor = -(0.95 * std::log(0.95) + 0.05 * std::log(0.05));
    const double total = total_loss(probs, {1, 0, 0}, pis, cfg).item();
    // CE term is 0; each class contributes the same smoothed-BCE floor
    CHECK(total == doctest::Approx(floor).epsilon(1e-9));

    // composition is linear in the CE component
    Tensor probs2({3}, {0.5, 0.3, 0.2});
    const double ce = cross_entropy(probs2, {1, 0, 0}).item();
    const double total2 = total_loss(probs2, {1, 0, 0}, pis, cfg).item();
    CHECK(total2 == doctest::Approx(floor + ce).epsilon(1e-9));
}

TEST_CASE("gradient of total loss wrt explanatory attention matches FD") {
    LossConfig cfg;
    Rng rng(9);
    const std::size_t l = 6, c = 3;
    std::vector<double> av(l * c);
    for (auto& v : av) v = rng.uniform(0.05, 0.95);
    Tensor aprime({l, c}, av, /*requires_grad=*/true);
    Tensor probs({3}, {0.6, 0.3, 0.1});

    auto build = [&]() {
        return total_loss(probs, {0, 1, 0}, noisy_or_per_class(aprime, cfg), cfg);
    };
    build().backward();
    CHECK(persam::testing::check_leaf_gradient(
              aprime, [&]() { return build().item(); }) < 1e-4);
}

TEST_CASE("total loss stays finite for extreme finite inputs") {
    LossConfig cfg;
    Tensor probs({3}, {1.0 - 2e-12, 1e-12, 1e-12});
    std::vector<Tensor> pis = {Tensor({1}, {1e-15}), Tensor({1}, {1.0 - 1e-15}),
                               Tensor({1}, {0.5})};
    const double v = total_loss(probs, {0, 0, 1}, pis, cfg).item();
    CHECK(std::isfinite(v));
}
