#pragma once

// Overlap and surface-distance metrics on binary masks (2D or 3D).

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "corn/image.hpp"

namespace corn {

class BinaryMask {
public:
    /// dims has 2 or 3 extents, each >= 1. spacing defaults to 1 per axis.
    explicit BinaryMask(std::vector<std::size_t> dims, std::vector<double> spacing = {});
    BinaryMask(std::vector<std::size_t> dims, std::vector<std::uint8_t> voxels, std::vector<double> spacing = {});

    /// Foreground = pixels equal to `foreground`.
    static BinaryMask from_labels(const LabelMap& labels, int foreground = 1);

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    const std::vector<double>& spacing() const noexcept { return spacing_; }
    std::size_t size() const noexcept { return voxels_.size(); }
    bool get(std::size_t i) const { return voxels_[i] != 0; }
    void set(std::size_t i, bool v) { voxels_[i] = v ? 1 : 0; }
    std::size_t count() const;

private:
    std::vector<std::size_t> dims_;
    std::vector<double> spacing_;
    std::vector<std::uint8_t> voxels_;  // row-major, last axis fastest
};

using Point = std::array<double, 3>;

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// |A n B| / |A u B|; 1 when both are empty.
double jaccard(const BinaryMask& a, const BinaryMask& b);

/// Foreground voxels with a face-adjacent background or out-of-bounds
/// neighbour, as spacing-scaled coordinates. Throws "no surface" on an empty mask.
std::vector<Point> surface(const BinaryMask& a);

/// For each point of `from`, the Euclidean distance to the nearest point of `to`.
std::vector<double> nearest_distances(const std::vector<Point>& from, const std::vector<Point>& to);

/// Max of the two directed nearest-rank 95th percentiles of surface distances.
double hd95(const BinaryMask& a, const BinaryMask& b);

/// Mean of the two directed mean surface distances.
double asd(const BinaryMask& a, const BinaryMask& b);

struct MetricRow {
    std::string id;
    double dice = 0.0;
    double jaccard = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
};

/// All four metrics for a prediction against ground truth. An empty
/// prediction or truth (no surface) scores the maximal in-grid distance for
/// hd95 and asd.
MetricRow evaluate_pair(const std::string& id, const BinaryMask& prediction, const BinaryMask& truth);

/// Arithmetic mean of each column; id is "mean".
MetricRow mean_row(const std::vector<MetricRow>& rows);

/// CSV with header "id,dice,jaccard,hd95,asd", LF line endings.
void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows);

}  // namespace corn
