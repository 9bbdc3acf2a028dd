#pragma once
// Central-difference check of the full training objective on small random
// batches. Shared by the unit tests and the acceptance runner.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "corn/rng.hpp"
#include "corn/trainer.hpp"

namespace gradcheck {

struct Scenario {
    corn::DualModelState state;
    corn::BatchImages images;
    corn::StepPlan plan;
    corn::LossWeights weights;
};

// Two labeled and two unlabeled side x side images, random pseudo-labels,
// a fixed unlabeled selection and random anchors, all three terms weighted 1.
inline Scenario make_scenario(std::uint64_t seed, std::size_t side, corn::Similarity kind = corn::Similarity::coral) {
    corn::Rng rng(seed);
    const corn::Arch arch{1, 8, 2, 8};
    Scenario s{corn::init_model(arch, corn::mix_seed(seed, 1), corn::mix_seed(seed, 2)), {}, {}, {}};
    const std::size_t px = side * side;
    for (int k = 0; k < 2; ++k) {
        corn::Image img(side, side);
        corn::LabelMap mask(side, side);
        for (std::size_t i = 0; i < px; ++i) {
            img.pixels[i] = rng.uniform();
            mask.labels[i] = static_cast<int>(rng.index(2));
        }
        s.images.labeled.push_back(img);
        s.images.masks.push_back(mask);
        s.images.instances.push_back(static_cast<std::size_t>(k));
    }
    for (int k = 0; k < 2; ++k) {
        corn::Image img(side, side);
        for (auto& v : img.pixels) v = rng.uniform();
        s.images.unlabeled.push_back(img);
    }
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<int> a(px), b(px);
        for (std::size_t i = 0; i < px; ++i) {
            a[i] = static_cast<int>(rng.index(2));
            b[i] = static_cast<int>(rng.index(2));
        }
        s.plan.pseudo_main.push_back(a);
        s.plan.pseudo_aux.push_back(b);
    }
    for (std::size_t k = 0; k < 12; ++k) s.plan.selection.emplace_back(rng.index(2), rng.index(px));
    corn::Matrix anchors(8, 8);
    for (auto& v : anchors.data()) v = 2.0 * rng.normal();
    s.plan.anchors = corn::FeatureMatrix(anchors);
    s.plan.similarity = kind;
    s.weights = corn::LossWeights{1.0, 1.0, 1.0, 10, 10};
    return s;
}

inline double objective(const Scenario& s, const corn::DualModelState& state) {
    const auto fw = corn::forward_batch(state, s.images);
    return corn::evaluate_objective(state, fw, s.images, s.plan, s.weights, nullptr).total;
}

// Sign pattern of every ReLU input across the batch.
inline std::vector<bool> relu_pattern(const Scenario& s, const corn::DualModelState& state) {
    std::vector<bool> out;
    for (const auto& f : corn::forward_batch(state, s.images)) {
        for (const auto* b : {&f.main, &f.aux}) {
            for (double v : b->pre1) out.push_back(v > 0.0);
            for (double v : b->pre2) out.push_back(v > 0.0);
        }
    }
    return out;
}

struct Report {
    std::size_t checked = 0;
    std::size_t kinked = 0;  // every step size straddled a ReLU kink; skipped
    double worst_rel = 0.0;
    std::string worst_where;
};

// Relative error |g - fd| / max(|g|, |fd|, floor). Central-difference
// roundoff on an O(1) objective at h = 1e-5 is about 1e-10, so gradients far
// below the floor cannot be resolved by differencing at all.
inline Report check(const Scenario& s, double h = 1e-5, double floor = 1e-5) {
    const auto fw = corn::forward_batch(s.state, s.images);
    auto grads = corn::zero_gradients(s.state.arch);
    corn::evaluate_objective(s.state, fw, s.images, s.plan, s.weights, &grads);
    const auto base = relu_pattern(s, s.state);

    Report rep;
    for (int branch = 0; branch < 2; ++branch) {
        const auto& analytic = branch == 0 ? grads.main : grads.aux;
        for (std::size_t p = 0; p < analytic.size(); ++p) {
            bool done = false;
            for (double step = h; step >= h * 1e-3 && !done; step *= 0.1) {
                auto plus = s.state;
                auto minus = s.state;
                (branch == 0 ? plus.main : plus.aux).params[p] += step;
                (branch == 0 ? minus.main : minus.aux).params[p] -= step;
                if (relu_pattern(s, plus) != base || relu_pattern(s, minus) != base) continue;
                const double fd = (objective(s, plus) - objective(s, minus)) / (2.0 * step);
                const double g = analytic[p];
                const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
                if (rel > rep.worst_rel) {
                    rep.worst_rel = rel;
                    rep.worst_where = (branch == 0 ? "main[" : "aux[") + std::to_string(p) + "]";
                }
                ++rep.checked;
                done = true;
            }
            if (!done) ++rep.kinked;
        }
    }
    return rep;
}

}  // namespace gradcheck
