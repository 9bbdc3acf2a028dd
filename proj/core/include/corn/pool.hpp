#pragma once

// Dynamic feature pool: anchor embeddings harvested from labeled pixels that
// both branches classify correctly, refreshed by weighted fusion, plus the
// confidence-ranked samplers feeding the correlation consistency term.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "corn/coral.hpp"
#include "corn/numerics.hpp"
#include "corn/rng.hpp"

namespace corn {

struct PoolSlot {
    int class_id = 0;
    std::vector<double> embedding;
    double confidence = 0.0;
    std::size_t updates = 0;         ///< fill + fusion events
    std::uint64_t last_update = 0;   ///< pool tick of the most recent write; 0 = never
    bool filled = false;

    bool operator==(const PoolSlot&) const = default;
};

/// Embeddings with one class label per row.
struct AnchorSet {
    FeatureMatrix features;
    std::vector<int> labels;
};

class FeaturePool {
public:
    /// N slots per labeled instance, split across the C classes as evenly as
    /// possible (lower class ids take the remainder). Requires N >= C so every
    /// class owns at least one slot.
    FeaturePool(std::size_t labeled_count, std::size_t slots_per_instance, std::size_t classes,
                std::size_t dim, double alpha, std::uint64_t seed);

    /// Harvests one labeled instance. Pixels where pred1 == pred2 == truth are
    /// eligible; the candidate embedding of a pixel is the mean of its two
    /// branch projections. Per class, the highest-confidence candidates (ties:
    /// lower pixel index) go into that class's slots: empty slots are filled
    /// directly, otherwise the least recently updated slot is fused as
    /// alpha * old + (1 - alpha) * new.
    void update(std::size_t instance, const FeatureMatrix& z_main, const FeatureMatrix& z_aux,
                std::span<const int> pred1, std::span<const int> pred2, std::span<const int> truth,
                std::span<const double> confidence);

    /// j embeddings per class (n = j * C). Per class, ceil((1 - low_conf_fraction) * j)
    /// come uniformly from all filled slots and the rest from the
    /// below-median-confidence half. Draws are without replacement while the
    /// candidate set is large enough, with replacement otherwise.
    /// Throws "pool underfilled" if some class has no filled slot.
    AnchorSet sample_anchors(std::size_t j, double low_conf_fraction);

    /// True once every class has at least one filled slot.
    bool ready() const;

    std::size_t labeled_count() const noexcept { return labeled_count_; }
    std::size_t slots_per_instance() const noexcept { return slots_per_instance_; }
    std::size_t classes() const noexcept { return classes_; }
    std::size_t dim() const noexcept { return dim_; }
    double alpha() const noexcept { return alpha_; }
    std::size_t capacity() const noexcept { return slots_.size(); }
    std::size_t filled_count() const;
    std::size_t filled_count(int class_id) const;
    bool class_present(std::size_t instance, int class_id) const;
    const PoolSlot& slot(std::size_t instance, std::size_t k) const;
    std::span<const PoolSlot> slots() const noexcept { return slots_; }
    const Rng& rng() const noexcept { return rng_; }

    /// Versioned little-endian snapshot ("DFP1").
    void save(std::ostream& out) const;
    static FeaturePool load(std::istream& in);

    bool operator==(const FeaturePool&) const = default;

private:
    std::size_t class_begin(int class_id) const;
    std::size_t class_quota(int class_id) const;

    std::size_t labeled_count_;
    std::size_t slots_per_instance_;
    std::size_t classes_;
    std::size_t dim_;
    double alpha_;
    std::uint64_t tick_ = 0;
    Rng rng_;
    std::vector<PoolSlot> slots_;
};

/// Convenience wrapper matching the pool's constructor.
FeaturePool init_pool(std::size_t labeled_count, std::size_t slots_per_instance, std::size_t classes,
                      std::size_t dim, double alpha, std::uint64_t seed);

/// Unlabeled pixels whose two branch predictions agree, ranked per class.
struct UnlabeledSelection {
    std::vector<std::size_t> positions;  ///< pixel index into the input maps
    std::vector<int> classes;
    FeatureMatrix z_main;
    FeatureMatrix z_aux;
};

/// Among pixels with argmax(p1) == argmax(p2), ranks by min(max p1, max p2)
/// (ties: lower pixel index) and keeps the top i per class, grouped by class.
/// Returns nullopt when no pixel agrees.
std::optional<UnlabeledSelection> sample_unlabeled(const Matrix& p1, const Matrix& p2, const FeatureMatrix& z_main,
                                                   const FeatureMatrix& z_aux, std::size_t i);

/// Filter-free variant: up to i uniformly drawn pixels per class of the main
/// branch's prediction, without an agreement or confidence filter.
std::optional<UnlabeledSelection> sample_unlabeled_uniform(const Matrix& p1, const FeatureMatrix& z_main,
                                                           const FeatureMatrix& z_aux, std::size_t i, Rng& rng);

/// Pool-free anchors: j uniformly drawn rows per class straight from the
/// current labeled embeddings. nullopt if some class has no rows.
std::optional<AnchorSet> sample_anchors_uniform(const FeatureMatrix& embeddings, std::span<const int> labels,
                                                std::size_t classes, std::size_t j, Rng& rng);

}  // namespace corn
