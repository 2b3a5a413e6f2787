#pragma once

// Generator-aware oracles used by the data tests and the acceptance suite.
// The motif detector is a matched filter: with known templates and Gaussian
// background noise it is the likelihood-ratio test, so its decisions realize
// the Bayes-optimal image-only classifier.

#include <cmath>
#include <vector>

#include "persam/data_synth.hpp"

namespace persam::testing {

struct MotifTemplates {
    std::vector<double> checker;  // zero-mean, one patch worth of pixels
    std::vector<double> ring;
    double checker_norm = 0.0;
    double ring_norm = 0.0;
};

inline MotifTemplates make_templates(const GenConfig& cfg) {
    const std::size_t s = cfg.patch_size, ch = cfg.patch_channels;
    const std::size_t n = ch * s * s;
    MotifTemplates t;
    t.checker.assign(n, 0.0);
    t.ring.assign(n, 0.0);
    const double cx = static_cast<double>(s - 1) / 2.0;
    const double radius = static_cast<double>(s) * 0.3;
    double ring_mean = 0.0;
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const std::size_t i = (c * s + y) * s + x;
                t.checker[i] = ((x + y) % 2 == 0) ? 1.0 : -1.0;
                const double d = std::hypot(static_cast<double>(x) - cx,
                                            static_cast<double>(y) - cx);
                t.ring[i] = std::fabs(d - radius) <= 1.2 ? 1.0 : 0.0;
                ring_mean += t.ring[i];
            }
    ring_mean /= static_cast<double>(n);
    for (auto& v : t.ring) v -= ring_mean;  // center so background cancels
    for (double v : t.checker) t.checker_norm += v * v;
    for (double v : t.ring) t.ring_norm += v * v;
    t.checker_norm = std::sqrt(t.checker_norm);
    t.ring_norm = std::sqrt(t.ring_norm);
    return t;
}

// z-scored matched-filter response of one patch against one template.
inline double filter_response(const float* patch, const std::vector<double>& tmpl,
                              double tmpl_norm, double noise_sigma) {
    double dot = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < tmpl.size(); ++i) mean += patch[i];
    mean /= static_cast<double>(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size(); ++i) dot += (patch[i] - mean) * tmpl[i];
    return dot / (tmpl_norm * noise_sigma);
}

// Detected motif for a whole case pool: 0 checker, 1 ring, 2 none.
inline int detect_motif(const SyntheticCase& c, const GenConfig& cfg,
                        const MotifTemplates& t, double threshold = 5.0,
                        const std::vector<std::size_t>* only = nullptr) {
    const std::size_t n = cfg.patch_channels * cfg.patch_size * cfg.patch_size;
    double best_checker = 0.0, best_ring = 0.0;
    const std::size_t pool = c.evidence.size();
    for (std::size_t p = 0; p < pool; ++p) {
        if (only) {
            bool wanted = false;
            for (std::size_t idx : *only) wanted |= (idx == p);
            if (!wanted) continue;
        }
        const float* patch = c.patches.data() + p * n;
        best_checker = std::max(
            best_checker,
            std::fabs(filter_response(patch, t.checker, t.checker_norm,
                                      cfg.background_noise)));
        best_ring = std::max(best_ring, filter_response(patch, t.ring, t.ring_norm,
                                                        cfg.background_noise));
    }
    if (best_checker < threshold && best_ring < threshold) return 2;
    return best_checker >= best_ring ? 0 : 1;
}

// Bayes-optimal image-only prediction: the detected motif is the class with
// the highest posterior (P(motif == label) > 1/2).
inline int bayes_image_only_prediction(const SyntheticCase& c, const GenConfig& cfg,
                                       const MotifTemplates& t) {
    return detect_motif(c, cfg, t);
}

// Oracle using only mask-selected patches: empty mask identifies the
// background-only class.
inline int mask_oracle_prediction(const SyntheticCase& c, const GenConfig& cfg,
                                  const MotifTemplates& t) {
    std::vector<std::size_t> selected;
    for (std::size_t p = 0; p < c.evidence.size(); ++p)
        if (c.evidence[p]) selected.push_back(p);
    if (selected.empty()) return 2;
    return detect_motif(c, cfg, t, 5.0, &selected);
}

}  // namespace persam::testing
