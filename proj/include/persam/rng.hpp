#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace persam {

// Counter-based splitmix64 generator. Cheap to seed, cheap to fork, and the
// output stream depends only on (seed, draw index), so every consumer of
// randomness in the project is reproducible from its seed alone.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    int uniform_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; spelled out so the stream is portable across standard libraries.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // Normal redrawn until within 2 standard deviations.
    double truncated_normal(double stddev) {
        double x = normal(0.0, stddev);
        while (std::fabs(x) > 2.0 * stddev) x = normal(0.0, stddev);
        return x;
    }

    // Fisher-Yates over indices [0, n).
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    // Sample k distinct indices from [0, n) without replacement.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> p = permutation(n);
        p.resize(k);
        return p;
    }

    // Independent child stream; used to derive per-case / per-layer seeds.
    Rng fork(std::uint64_t tag) {
        Rng child(state_ ^ (0xd1342543de82ef95ull * (tag + 1)));
        child.next_u64();
        return child;
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) {
        state_ = s;
        have_spare_ = false;
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace persam
