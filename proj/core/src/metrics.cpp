#include "corn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace corn {

namespace {

void require_same_dims(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.dims() != b.dims()) throw std::invalid_argument(std::string(what) + ": dim mismatch");
}

std::size_t product(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

double directed_percentile(std::vector<double> d, double q) {
    std::sort(d.begin(), d.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(d.size())));
    return d[std::max<std::size_t>(rank, 1) - 1];
}

double mean(const std::vector<double>& d) { return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()); }

}  // namespace

BinaryMask::BinaryMask(std::vector<std::size_t> dims, std::vector<double> spacing)
    : BinaryMask(dims, std::vector<std::uint8_t>(product(dims), 0), std::move(spacing)) {}

BinaryMask::BinaryMask(std::vector<std::size_t> dims, std::vector<std::uint8_t> voxels, std::vector<double> spacing)
    : dims_(std::move(dims)), spacing_(std::move(spacing)), voxels_(std::move(voxels)) {
    if (dims_.size() != 2 && dims_.size() != 3) throw std::invalid_argument("BinaryMask: need 2 or 3 dims");
    for (auto d : dims_) {
        if (d == 0) throw std::invalid_argument("BinaryMask: zero extent");
    }
    if (spacing_.empty()) spacing_.assign(dims_.size(), 1.0);
    if (spacing_.size() != dims_.size()) throw std::invalid_argument("BinaryMask: spacing rank mismatch");
    for (double s : spacing_) {
        if (!(s > 0.0)) throw std::invalid_argument("BinaryMask: spacing must be > 0");
    }
    if (voxels_.size() != product(dims_)) throw std::invalid_argument("BinaryMask: voxel count mismatch");
    for (auto& v : voxels_) v = v != 0 ? 1 : 0;
}

BinaryMask BinaryMask::from_labels(const LabelMap& labels, int foreground) {
    std::vector<std::uint8_t> vox(labels.size());
    for (std::size_t i = 0; i < vox.size(); ++i) vox[i] = labels.labels[i] == foreground ? 1 : 0;
    return BinaryMask({labels.height, labels.width}, std::move(vox));
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(voxels_.begin(), voxels_.end(), std::uint8_t{1}));
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b, "dice");
    std::size_t inter = 0;
    for (std::size_t i = 0; i < a.size(); ++i) inter += (a.get(i) && b.get(i)) ? 1 : 0;
    const std::size_t total = a.count() + b.count();
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double jaccard(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b, "jaccard");
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a.get(i) && b.get(i)) ? 1 : 0;
        uni += (a.get(i) || b.get(i)) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Point> surface(const BinaryMask& a) {
    // Treat 2D masks as a single slice of a 3D grid.
    const auto& d = a.dims();
    const bool three = d.size() == 3;
    const std::size_t nz = three ? d[0] : 1;
    const std::size_t ny = three ? d[1] : d[0];
    const std::size_t nx = three ? d[2] : d[1];
    const double sz = three ? a.spacing()[0] : 1.0;
    const double sy = a.spacing()[three ? 1 : 0];
    const double sx = a.spacing()[three ? 2 : 1];
    const auto at = [&](long z, long y, long x) -> bool {
        if (z < 0 || y < 0 || x < 0 || z >= static_cast<long>(nz) || y >= static_cast<long>(ny) || x >= static_cast<long>(nx)) {
            return false;
        }
        return a.get((static_cast<std::size_t>(z) * ny + static_cast<std::size_t>(y)) * nx + static_cast<std::size_t>(x));
    };
    std::vector<Point> pts;
    for (long z = 0; z < static_cast<long>(nz); ++z) {
        for (long y = 0; y < static_cast<long>(ny); ++y) {
            for (long x = 0; x < static_cast<long>(nx); ++x) {
                if (!at(z, y, x)) continue;
                bool border = !at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1);
                if (three) border = border || !at(z - 1, y, x) || !at(z + 1, y, x);
                if (border) {
                    pts.push_back({static_cast<double>(z) * sz, static_cast<double>(y) * sy, static_cast<double>(x) * sx});
                }
            }
        }
    }
    if (pts.empty()) throw std::invalid_argument("no surface");
    return pts;
}

std::vector<double> nearest_distances(const std::vector<Point>& from, const std::vector<Point>& to) {
    if (to.empty()) throw std::invalid_argument("nearest_distances: empty target set");
    // Sweep over targets sorted on the first non-degenerate axis; prune once the
    // axis gap alone exceeds the best distance so far.
    std::vector<Point> sorted = to;
    std::sort(sorted.begin(), sorted.end(), [](const Point& p, const Point& q) { return p[1] < q[1]; });
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& p : from) {
        const auto start = std::lower_bound(sorted.begin(), sorted.end(), p[1],
                                            [](const Point& q, double v) { return q[1] < v; });
        double best_sq = INFINITY;
        const auto visit = [&](const Point& q) {
            const double dz = p[0] - q[0];
            const double dy = p[1] - q[1];
            const double dx = p[2] - q[2];
            best_sq = std::min(best_sq, dz * dz + dy * dy + dx * dx);
        };
        for (auto it = start; it != sorted.end(); ++it) {
            const double gap = (*it)[1] - p[1];
            if (gap * gap > best_sq) break;
            visit(*it);
        }
        for (auto it = start; it != sorted.begin();) {
            --it;
            const double gap = p[1] - (*it)[1];
            if (gap * gap > best_sq) break;
            visit(*it);
        }
        out.push_back(std::sqrt(best_sq));
    }
    return out;
}

double hd95(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b, "hd95");
    const auto sa = surface(a);
    const auto sb = surface(b);
    return std::max(directed_percentile(nearest_distances(sa, sb), 0.95),
                    directed_percentile(nearest_distances(sb, sa), 0.95));
}

double asd(const BinaryMask& a, const BinaryMask& b) {
    require_same_dims(a, b, "asd");
    const auto sa = surface(a);
    const auto sb = surface(b);
    return 0.5 * (mean(nearest_distances(sa, sb)) + mean(nearest_distances(sb, sa)));
}

MetricRow evaluate_pair(const std::string& id, const BinaryMask& prediction, const BinaryMask& truth) {
    MetricRow row;
    row.id = id;
    row.dice = dice(prediction, truth);
    row.jaccard = jaccard(prediction, truth);
    if (prediction.count() == 0 || truth.count() == 0) {
        double diag = 0.0;
        for (std::size_t k = 0; k < truth.dims().size(); ++k) {
            const double ext = static_cast<double>(truth.dims()[k] - 1) * truth.spacing()[k];
            diag += ext * ext;
        }
        const bool both_empty = prediction.count() == 0 && truth.count() == 0;
        row.hd95 = both_empty ? 0.0 : std::sqrt(diag);
        row.asd = row.hd95;
    } else {
        row.hd95 = hd95(prediction, truth);
        row.asd = asd(prediction, truth);
    }
    return row;
}

MetricRow mean_row(const std::vector<MetricRow>& rows) {
    if (rows.empty()) throw std::invalid_argument("mean_row: no rows");
    MetricRow m;
    m.id = "mean";
    for (const auto& r : rows) {
        m.dice += r.dice;
        m.jaccard += r.jaccard;
        m.hd95 += r.hd95;
        m.asd += r.asd;
    }
    const double n = static_cast<double>(rows.size());
    m.dice /= n;
    m.jaccard /= n;
    m.hd95 /= n;
    m.asd /= n;
    return m;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows) {
    out << "id,dice,jaccard,hd95,asd\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", r.dice, r.jaccard, r.hd95, r.asd);
        out << r.id << ',' << buf << '\n';
    }
}

}  // namespace corn
