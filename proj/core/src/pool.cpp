#include "corn/pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"

namespace corn {

namespace {

constexpr std::string_view kPoolMagic = "DFP1";

// Draws `count` items from `candidates`, without replacement while there are
// enough of them (partial Fisher-Yates), with replacement otherwise.
std::vector<std::size_t> draw(std::vector<std::size_t> candidates, std::size_t count, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(count);
    if (candidates.size() >= count) {
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t pick = k + rng.index(candidates.size() - k);
            std::swap(candidates[k], candidates[pick]);
            out.push_back(candidates[k]);
        }
    } else {
        for (std::size_t k = 0; k < count; ++k) out.push_back(candidates[rng.index(candidates.size())]);
    }
    return out;
}

double row_max(std::span<const double> row) { return *std::max_element(row.begin(), row.end()); }

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), src.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy(src.row(rows[r]).begin(), src.row(rows[r]).end(), out.row(r).begin());
    }
    return out;
}

}  // namespace

FeaturePool::FeaturePool(std::size_t labeled_count, std::size_t slots_per_instance, std::size_t classes,
                         std::size_t dim, double alpha, std::uint64_t seed)
    : labeled_count_(labeled_count),
      slots_per_instance_(slots_per_instance),
      classes_(classes),
      dim_(dim),
      alpha_(alpha),
      rng_(seed) {
    if (labeled_count == 0 || slots_per_instance == 0 || classes == 0 || dim == 0) {
        throw std::invalid_argument("init_pool: counts must be >= 1");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("init_pool: alpha must lie in [0, 1]");
    if (slots_per_instance < classes) {
        throw std::invalid_argument("init_pool: need at least one slot per class per instance");
    }
    slots_.resize(labeled_count * slots_per_instance);
    for (std::size_t inst = 0; inst < labeled_count; ++inst) {
        for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t begin = class_begin(static_cast<int>(c));
            for (std::size_t k = 0; k < class_quota(static_cast<int>(c)); ++k) {
                auto& s = slots_[inst * slots_per_instance + begin + k];
                s.class_id = static_cast<int>(c);
                s.embedding.assign(dim, 0.0);
            }
        }
    }
}

FeaturePool init_pool(std::size_t labeled_count, std::size_t slots_per_instance, std::size_t classes,
                      std::size_t dim, double alpha, std::uint64_t seed) {
    return FeaturePool(labeled_count, slots_per_instance, classes, dim, alpha, seed);
}

std::size_t FeaturePool::class_quota(int class_id) const {
    const auto c = static_cast<std::size_t>(class_id);
    return slots_per_instance_ / classes_ + (c < slots_per_instance_ % classes_ ? 1 : 0);
}

std::size_t FeaturePool::class_begin(int class_id) const {
    std::size_t begin = 0;
    for (int c = 0; c < class_id; ++c) begin += class_quota(c);
    return begin;
}

void FeaturePool::update(std::size_t instance, const FeatureMatrix& z_main, const FeatureMatrix& z_aux,
                         std::span<const int> pred1, std::span<const int> pred2, std::span<const int> truth,
                         std::span<const double> confidence) {
    if (instance >= labeled_count_) throw std::out_of_range("update_pool: instance id out of range");
    const std::size_t n = z_main.count();
    if (z_aux.count() != n || pred1.size() != n || pred2.size() != n || truth.size() != n || confidence.size() != n) {
        throw std::invalid_argument("update_pool: per-pixel length mismatch");
    }
    if (z_main.dim() != dim_ || z_aux.dim() != dim_) throw std::invalid_argument("update_pool: embedding dim mismatch");

    std::vector<std::vector<std::size_t>> eligible(classes_);
    for (std::size_t i = 0; i < n; ++i) {
        if (pred1[i] != truth[i] || pred2[i] != truth[i]) continue;
        if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes_) {
            throw std::invalid_argument("update_pool: label out of range");
        }
        if (!(confidence[i] >= 0.0 && confidence[i] <= 1.0)) {
            throw std::invalid_argument("update_pool: confidence must lie in [0, 1]");
        }
        eligible[static_cast<std::size_t>(truth[i])].push_back(i);
    }

    std::vector<double> candidate(dim_);
    for (std::size_t c = 0; c < classes_; ++c) {
        auto& pixels = eligible[c];
        if (pixels.empty()) continue;
        std::stable_sort(pixels.begin(), pixels.end(),
                         [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
        const int cls = static_cast<int>(c);
        const std::size_t base = instance * slots_per_instance_ + class_begin(cls);
        const std::size_t quota = class_quota(cls);
        const std::size_t take = std::min(quota, pixels.size());
        std::vector<bool> touched(quota, false);

        for (std::size_t r = 0; r < take; ++r) {
            const std::size_t px = pixels[r];
            for (std::size_t d = 0; d < dim_; ++d) candidate[d] = 0.5 * (z_main.row(px)[d] + z_aux.row(px)[d]);

            // Empty slot first; otherwise the least recently updated one not yet used this call.
            std::size_t target = quota;
            for (std::size_t k = 0; k < quota; ++k) {
                if (!touched[k] && !slots_[base + k].filled) {
                    target = k;
                    break;
                }
            }
            if (target == quota) {
                for (std::size_t k = 0; k < quota; ++k) {
                    if (touched[k]) continue;
                    if (target == quota || slots_[base + k].last_update < slots_[base + target].last_update) target = k;
                }
            }
            touched[target] = true;

            auto& s = slots_[base + target];
            if (!s.filled) {
                s.embedding = candidate;
                s.filled = true;
            } else {
                for (std::size_t d = 0; d < dim_; ++d) {
                    s.embedding[d] = alpha_ * s.embedding[d] + (1.0 - alpha_) * candidate[d];
                }
            }
            s.confidence = confidence[px];
            s.updates += 1;
            s.last_update = ++tick_;
        }
    }
}

bool FeaturePool::ready() const {
    for (std::size_t c = 0; c < classes_; ++c) {
        if (filled_count(static_cast<int>(c)) == 0) return false;
    }
    return true;
}

std::size_t FeaturePool::filled_count() const {
    return static_cast<std::size_t>(std::count_if(slots_.begin(), slots_.end(), [](const PoolSlot& s) { return s.filled; }));
}

std::size_t FeaturePool::filled_count(int class_id) const {
    return static_cast<std::size_t>(std::count_if(
        slots_.begin(), slots_.end(), [&](const PoolSlot& s) { return s.filled && s.class_id == class_id; }));
}

bool FeaturePool::class_present(std::size_t instance, int class_id) const {
    if (instance >= labeled_count_) throw std::out_of_range("class_present: instance id out of range");
    const std::size_t base = instance * slots_per_instance_ + class_begin(class_id);
    for (std::size_t k = 0; k < class_quota(class_id); ++k) {
        if (slots_[base + k].filled) return true;
    }
    return false;
}

const PoolSlot& FeaturePool::slot(std::size_t instance, std::size_t k) const {
    if (instance >= labeled_count_ || k >= slots_per_instance_) throw std::out_of_range("FeaturePool::slot");
    return slots_[instance * slots_per_instance_ + k];
}

AnchorSet FeaturePool::sample_anchors(std::size_t j, double low_conf_fraction) {
    if (j == 0) throw std::invalid_argument("sample_anchors: j must be >= 1");
    if (!(low_conf_fraction >= 0.0 && low_conf_fraction <= 1.0)) {
        throw std::invalid_argument("sample_anchors: low_conf_fraction must lie in [0, 1]");
    }
    // The small slack keeps e.g. (1 - 0.1) * 10 from rounding up to 10.
    const auto n_high = static_cast<std::size_t>(std::ceil((1.0 - low_conf_fraction) * static_cast<double>(j) - 1e-9));
    const std::size_t n_low = j - std::min(n_high, j);

    Matrix rows(j * classes_, dim_);
    std::vector<int> labels;
    labels.reserve(j * classes_);
    std::size_t out_row = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
        std::vector<std::size_t> filled;
        for (std::size_t s = 0; s < slots_.size(); ++s) {
            if (slots_[s].filled && slots_[s].class_id == static_cast<int>(c)) filled.push_back(s);
        }
        if (filled.empty()) throw std::runtime_error("pool underfilled");

        std::vector<std::size_t> low = filled;
        std::stable_sort(low.begin(), low.end(),
                         [&](std::size_t a, std::size_t b) { return slots_[a].confidence < slots_[b].confidence; });
        low.resize(std::max<std::size_t>(low.size() / 2, 1));

        auto picks = draw(filled, std::min(n_high, j), rng_);
        const auto low_picks = draw(low, n_low, rng_);
        picks.insert(picks.end(), low_picks.begin(), low_picks.end());
        for (std::size_t s : picks) {
            std::copy(slots_[s].embedding.begin(), slots_[s].embedding.end(), rows.row(out_row++).begin());
            labels.push_back(static_cast<int>(c));
        }
    }
    return AnchorSet{FeatureMatrix(std::move(rows)), std::move(labels)};
}

void FeaturePool::save(std::ostream& out) const {
    io::write_magic(out, kPoolMagic);
    io::write_u64(out, labeled_count_);
    io::write_u64(out, slots_per_instance_);
    io::write_u64(out, classes_);
    io::write_u64(out, dim_);
    io::write_f64(out, alpha_);
    io::write_u64(out, rng_.seed());
    io::write_u64(out, rng_.draws());
    io::write_u64(out, tick_);
    for (const auto& s : slots_) {
        io::write_u64(out, s.filled ? 1 : 0);
        io::write_u64(out, static_cast<std::uint64_t>(s.class_id));
        io::write_u64(out, s.updates);
        io::write_u64(out, s.last_update);
        io::write_f64(out, s.confidence);
        for (double v : s.embedding) io::write_f64(out, v);
    }
    if (!out) throw std::runtime_error("failed to write pool snapshot");
}

FeaturePool FeaturePool::load(std::istream& in) {
    io::expect_magic(in, kPoolMagic);
    const auto labeled = io::read_u64(in);
    const auto per_instance = io::read_u64(in);
    const auto classes = io::read_u64(in);
    const auto dim = io::read_u64(in);
    const double alpha = io::read_f64(in);
    const auto seed = io::read_u64(in);
    const auto draws = io::read_u64(in);
    FeaturePool pool(labeled, per_instance, classes, dim, alpha, seed);
    pool.rng_ = Rng::restore(seed, draws);
    pool.tick_ = io::read_u64(in);
    for (auto& s : pool.slots_) {
        s.filled = io::read_u64(in) != 0;
        const auto cls = static_cast<int>(io::read_u64(in));
        if (cls != s.class_id) throw std::runtime_error("pool snapshot: slot layout mismatch");
        s.updates = io::read_u64(in);
        s.last_update = io::read_u64(in);
        s.confidence = io::read_f64(in);
        for (double& v : s.embedding) v = io::read_f64(in);
    }
    return pool;
}

std::optional<UnlabeledSelection> sample_unlabeled(const Matrix& p1, const Matrix& p2, const FeatureMatrix& z_main,
                                                   const FeatureMatrix& z_aux, std::size_t i) {
    const std::size_t n = p1.rows();
    if (p2.rows() != n || z_main.count() != n || z_aux.count() != n || p1.cols() != p2.cols()) {
        throw std::invalid_argument("sample_unlabeled: per-pixel arrays are not aligned");
    }
    if (i == 0) throw std::invalid_argument("sample_unlabeled: i must be >= 1");
    const auto y1 = argmax_rows(p1);
    const auto y2 = argmax_rows(p2);
    std::vector<double> conf(n);
    std::vector<std::vector<std::size_t>> by_class(p1.cols());
    for (std::size_t px = 0; px < n; ++px) {
        if (y1[px] != y2[px]) continue;
        conf[px] = std::min(row_max(p1.row(px)), row_max(p2.row(px)));
        by_class[static_cast<std::size_t>(y1[px])].push_back(px);
    }
    std::vector<std::size_t> positions;
    std::vector<int> classes;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& pixels = by_class[c];
        std::stable_sort(pixels.begin(), pixels.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
        const std::size_t take = std::min(i, pixels.size());
        positions.insert(positions.end(), pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(take));
        classes.insert(classes.end(), take, static_cast<int>(c));
    }
    if (positions.empty()) return std::nullopt;
    auto zm = gather_rows(z_main.values(), positions);
    auto za = gather_rows(z_aux.values(), positions);
    return UnlabeledSelection{std::move(positions), std::move(classes), FeatureMatrix(std::move(zm)),
                              FeatureMatrix(std::move(za))};
}

std::optional<UnlabeledSelection> sample_unlabeled_uniform(const Matrix& p1, const FeatureMatrix& z_main,
                                                           const FeatureMatrix& z_aux, std::size_t i, Rng& rng) {
    const std::size_t n = p1.rows();
    if (z_main.count() != n || z_aux.count() != n) {
        throw std::invalid_argument("sample_unlabeled_uniform: per-pixel arrays are not aligned");
    }
    if (i == 0) throw std::invalid_argument("sample_unlabeled_uniform: i must be >= 1");
    const auto y1 = argmax_rows(p1);
    std::vector<std::vector<std::size_t>> by_class(p1.cols());
    for (std::size_t px = 0; px < n; ++px) by_class[static_cast<std::size_t>(y1[px])].push_back(px);
    std::vector<std::size_t> positions;
    std::vector<int> classes;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const std::size_t take = std::min(i, by_class[c].size());
        auto picks = draw(by_class[c], take, rng);
        positions.insert(positions.end(), picks.begin(), picks.end());
        classes.insert(classes.end(), take, static_cast<int>(c));
    }
    if (positions.empty()) return std::nullopt;
    auto zm = gather_rows(z_main.values(), positions);
    auto za = gather_rows(z_aux.values(), positions);
    return UnlabeledSelection{std::move(positions), std::move(classes), FeatureMatrix(std::move(zm)),
                              FeatureMatrix(std::move(za))};
}

std::optional<AnchorSet> sample_anchors_uniform(const FeatureMatrix& embeddings, std::span<const int> labels,
                                                std::size_t classes, std::size_t j, Rng& rng) {
    if (labels.size() != embeddings.count()) throw std::invalid_argument("sample_anchors_uniform: label count mismatch");
    if (j == 0) throw std::invalid_argument("sample_anchors_uniform: j must be >= 1");
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
            throw std::invalid_argument("sample_anchors_uniform: label out of range");
        }
        by_class[static_cast<std::size_t>(labels[r])].push_back(r);
    }
    std::vector<std::size_t> rows;
    std::vector<int> out_labels;
    for (std::size_t c = 0; c < classes; ++c) {
        if (by_class[c].empty()) return std::nullopt;
        auto picks = draw(by_class[c], j, rng);
        rows.insert(rows.end(), picks.begin(), picks.end());
        out_labels.insert(out_labels.end(), j, static_cast<int>(c));
    }
    return AnchorSet{FeatureMatrix(gather_rows(embeddings.values(), rows)), std::move(out_labels)};
}

}  // namespace corn
