#include "corn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "corn/rng.hpp"
#include "json.hpp"

namespace corn {

namespace {

struct Disc {
    double cy, cx, r;
};

struct Shape {
    double cy, cx, a, b, theta;
    std::vector<Disc> bumps;

    // Normalized ellipse radius; <= 1 inside.
    double rho(double y, double x) const {
        const double dy = y - cy;
        const double dx = x - cx;
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double u = (c * dx + s * dy) / a;
        const double v = (-s * dx + c * dy) / b;
        return std::sqrt(u * u + v * v);
    }

    bool inside(double y, double x) const {
        if (rho(y, x) <= 1.0) return true;
        return std::any_of(bumps.begin(), bumps.end(), [&](const Disc& d) {
            return (y - d.cy) * (y - d.cy) + (x - d.cx) * (x - d.cx) <= d.r * d.r;
        });
    }
};

Shape draw_shape(std::size_t size, Rng& rng) {
    const double n = static_cast<double>(size);
    Shape s{};
    s.cy = n / 2.0 + rng.uniform(-0.12, 0.12) * n;
    s.cx = n / 2.0 + rng.uniform(-0.12, 0.12) * n;
    s.a = rng.uniform(0.14, 0.30) * n;
    s.b = rng.uniform(0.14, 0.30) * n;
    s.theta = rng.uniform(0.0, std::numbers::pi);
    const std::size_t bumps = 1 + rng.index(3);
    for (std::size_t k = 0; k < bumps; ++k) {
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double c = std::cos(s.theta);
        const double sn = std::sin(s.theta);
        const double ex = s.a * std::cos(phi);
        const double ey = s.b * std::sin(phi);
        const double by = s.cy + sn * ex + c * ey;
        const double bx = s.cx + c * ex - sn * ey;
        const double len = std::hypot(by - s.cy, bx - s.cx);
        const double r = rng.uniform(0.25, 0.45) * std::min(s.a, s.b);
        s.bumps.push_back({by + (by - s.cy) / len * 0.5 * r, bx + (bx - s.cx) / len * 0.5 * r, r});
    }
    return s;
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

SegSample make_sample(int id, std::size_t size, std::uint64_t seed, double difficulty) {
    Rng rng(seed);
    LabelMap mask(size, size, 0);
    for (int attempt = 0;; ++attempt) {
        const Shape shape = draw_shape(size, rng);
        std::size_t fg = 0;
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const bool in = shape.inside(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5);
                mask.at(y, x) = in ? 1 : 0;
                fg += in ? 1 : 0;
            }
        }
        const double frac = static_cast<double>(fg) / static_cast<double>(size * size);
        if (frac >= 0.05 && frac <= 0.6) break;
        if (attempt > 1000) throw std::runtime_error("generate_dataset: could not draw a valid shape");
    }

    const double contrast = 1.0 - 0.7 * difficulty;
    const double bg = 0.5 * (1.0 - contrast);
    const double fg = bg + contrast;
    const double wall = bg + 0.45 * contrast;
    const double sigma = 0.2 * difficulty;
    const double inhomogeneity = 0.35 * difficulty * contrast;
    const double wy = rng.uniform(0.15, 0.45);
    const double wx = rng.uniform(0.15, 0.45);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    Image image(size, size, bg);
    const auto in_bounds = [&](long y, long x) {
        return y >= 0 && x >= 0 && y < static_cast<long>(size) && x < static_cast<long>(size);
    };
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double v = bg;
            if (mask.at(y, x) == 1) {
                const double wave = 0.5 + 0.5 * std::sin(wy * static_cast<double>(y) + wx * static_cast<double>(x) + phase);
                v = fg - inhomogeneity * wave;
            } else {
                // Thin wall: background pixels within Euclidean distance 1.5 of the foreground.
                bool near = false;
                for (long dy = -1; dy <= 1 && !near; ++dy) {
                    for (long dx = -1; dx <= 1 && !near; ++dx) {
                        const long yy = static_cast<long>(y) + dy;
                        const long xx = static_cast<long>(x) + dx;
                        near = in_bounds(yy, xx) && mask.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == 1;
                    }
                }
                if (near) v = wall;
            }
            image.at(y, x) = v;
        }
    }
    if (sigma > 0.0) {
        for (double& v : image.pixels) v += sigma * rng.normal();
    }
    for (double& v : image.pixels) v = quantize(v);

    SegSample s;
    s.id = id;
    s.image = std::move(image);
    s.mask = std::move(mask);
    s.seed = seed;
    return s;
}

}  // namespace

std::vector<SegSample> generate_dataset(std::size_t count, std::size_t size, std::uint64_t seed, double difficulty) {
    if (size < 8) throw std::invalid_argument("generate_dataset: size must be >= 8");
    if (count < 2) throw std::invalid_argument("generate_dataset: count must be >= 2");
    if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw std::invalid_argument("generate_dataset: difficulty must lie in [0, 1]");
    std::vector<SegSample> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        out.push_back(make_sample(static_cast<int>(k), size, mix_seed(seed, k), difficulty));
    }
    return out;
}

std::vector<SegSample> generate_dataset(const DatasetParams& p) {
    return generate_dataset(p.count, p.size, p.seed, p.difficulty);
}

TrainTestSplit train_test_split(const std::vector<SegSample>& dataset, double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw std::invalid_argument("train_test_split: bad fraction");
    const auto n_train = static_cast<std::size_t>(std::llround((1.0 - test_fraction) * static_cast<double>(dataset.size())));
    TrainTestSplit out;
    out.train.assign(dataset.begin(), dataset.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.assign(dataset.begin() + static_cast<std::ptrdiff_t>(n_train), dataset.end());
    return out;
}

LabeledSplit split(const std::vector<SegSample>& dataset, double labeled_fraction, std::uint64_t seed) {
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
        throw std::invalid_argument("split: labeled_fraction must lie in (0, 1]");
    }
    const auto n_labeled =
        static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(dataset.size())));
    if (n_labeled == 0) throw std::invalid_argument("split: fraction yields no labeled samples");

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);

    LabeledSplit out;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& s = dataset[order[k]];
        if (k < n_labeled) {
            out.labeled.push_back({s.id, s.image, s.mask});
        } else {
            out.unlabeled.push_back({s.id, s.image});
        }
    }
    return out;
}

Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    if (y0 + h > image.height || x0 + w > image.width) throw std::invalid_argument("crop: window exceeds image");
    Image out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) out.at(y, x) = image.at(y0 + y, x0 + x);
    }
    return out;
}

LabelMap crop(const LabelMap& mask, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    if (y0 + h > mask.height || x0 + w > mask.width) throw std::invalid_argument("crop: window exceeds mask");
    LabelMap out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) out.at(y, x) = mask.at(y0 + y, x0 + x);
    }
    return out;
}

MiniBatch crop_batch(const LabeledSplit& data, std::size_t crop_size, std::uint64_t seed) {
    if (data.labeled.empty()) throw std::invalid_argument("crop_batch: no labeled samples");
    if (crop_size == 0) throw std::invalid_argument("crop_batch: crop size must be >= 1");
    Rng rng(seed);
    const auto offsets = [&](std::size_t h, std::size_t w) {
        if (crop_size > h || crop_size > w) throw std::invalid_argument("crop_batch: crop larger than image");
        const std::size_t y0 = rng.index(h - crop_size + 1);
        const std::size_t x0 = rng.index(w - crop_size + 1);
        return std::pair{y0, x0};
    };
    const std::size_t n_labeled = data.unlabeled.empty() ? kBatchSize : kBatchSize / 2;
    MiniBatch batch;
    for (std::size_t k = 0; k < n_labeled; ++k) {
        const std::size_t inst = rng.index(data.labeled.size());
        const auto& s = data.labeled[inst];
        const auto [y0, x0] = offsets(s.image.height, s.image.width);
        batch.labeled.push_back({inst, s.id, y0, x0, crop(s.image, y0, x0, crop_size, crop_size),
                                 crop(s.mask, y0, x0, crop_size, crop_size)});
    }
    for (std::size_t k = n_labeled; k < kBatchSize; ++k) {
        const auto& s = data.unlabeled[rng.index(data.unlabeled.size())];
        const auto [y0, x0] = offsets(s.image.height, s.image.width);
        batch.unlabeled.push_back({s.id, y0, x0, crop(s.image, y0, x0, crop_size, crop_size)});
    }
    return batch;
}

namespace {

void write_pgm_bytes(const std::filesystem::path& path, std::size_t h, std::size_t w, unsigned maxval,
                     const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "P5\n" << w << ' ' << h << '\n' << maxval << '\n';
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct RawPgm {
    std::size_t h = 0;
    std::size_t w = 0;
    unsigned maxval = 0;
    std::vector<unsigned char> bytes;
};

RawPgm read_pgm_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error(path.string() + ": not a binary PGM");
    const auto next_int = [&]() {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw std::runtime_error(path.string() + ": malformed PGM header");
        return static_cast<std::size_t>(v);
    };
    RawPgm p;
    p.w = next_int();
    p.h = next_int();
    p.maxval = static_cast<unsigned>(next_int());
    if (p.maxval == 0 || p.maxval > 255) throw std::runtime_error(path.string() + ": only 8-bit PGM is supported");
    in.get();  // single whitespace after maxval
    p.bytes.resize(p.h * p.w);
    in.read(reinterpret_cast<char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
    if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
    return p;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image& image) {
    std::vector<unsigned char> bytes(image.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
    }
    write_pgm_bytes(path, image.height, image.width, 255, bytes);
}

void write_pgm(const std::filesystem::path& path, const LabelMap& mask, std::size_t classes) {
    if (classes < 2 || classes > 256) throw std::invalid_argument("write_pgm: unsupported class count");
    std::vector<unsigned char> bytes(mask.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const int v = mask.labels[i];
        if (v < 0 || static_cast<std::size_t>(v) >= classes) throw std::invalid_argument("write_pgm: label out of range");
        bytes[i] = static_cast<unsigned char>(v);
    }
    write_pgm_bytes(path, mask.height, mask.width, static_cast<unsigned>(classes - 1), bytes);
}

Image read_pgm_image(const std::filesystem::path& path) {
    const RawPgm p = read_pgm_bytes(path);
    Image img(p.h, p.w);
    for (std::size_t i = 0; i < p.bytes.size(); ++i) {
        img.pixels[i] = static_cast<double>(p.bytes[i]) / static_cast<double>(p.maxval);
    }
    return img;
}

LabelMap read_pgm_mask(const std::filesystem::path& path) {
    const RawPgm p = read_pgm_bytes(path);
    LabelMap m(p.h, p.w);
    for (std::size_t i = 0; i < p.bytes.size(); ++i) m.labels[i] = p.bytes[i];
    return m;
}

namespace {

std::string numbered(const char* stem, int id) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d.pgm", stem, id);
    return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const std::vector<SegSample>& samples,
                  const DatasetManifest& manifest) {
    std::filesystem::create_directories(dir);
    const auto parts = train_test_split(samples, manifest.test_fraction);
    nlohmann::ordered_json j;
    j["format"] = "corn-dataset";
    j["version"] = 1;
    j["generator"] = {{"count", manifest.params.count},
                      {"size", manifest.params.size},
                      {"seed", manifest.params.seed},
                      {"difficulty", manifest.params.difficulty},
                      {"classes", kDatasetClasses}};
    j["split"] = {{"test_fraction", manifest.test_fraction},
                  {"labeled_fraction", manifest.labeled_fraction},
                  {"split_seed", manifest.split_seed}};
    auto list = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& s = samples[k];
        const auto image_name = numbered("image", s.id);
        const auto mask_name = numbered("mask", s.id);
        write_pgm(dir / image_name, s.image);
        write_pgm(dir / mask_name, s.mask, kDatasetClasses);
        list.push_back({{"id", s.id},
                        {"seed", s.seed},
                        {"image", image_name},
                        {"mask", mask_name},
                        {"subset", k < parts.train.size() ? "train" : "test"},
                        {"labeled", s.labeled}});
    }
    j["samples"] = std::move(list);
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest");
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed manifest: ") + e.what());
    }
    LoadedDataset out;
    try {
        const auto& g = j.at("generator");
        out.manifest.params.count = g.at("count").get<std::size_t>();
        out.manifest.params.size = g.at("size").get<std::size_t>();
        out.manifest.params.seed = g.at("seed").get<std::uint64_t>();
        out.manifest.params.difficulty = g.at("difficulty").get<double>();
        const auto& sp = j.at("split");
        out.manifest.test_fraction = sp.at("test_fraction").get<double>();
        out.manifest.labeled_fraction = sp.at("labeled_fraction").get<double>();
        out.manifest.split_seed = sp.at("split_seed").get<std::uint64_t>();
        for (const auto& e : j.at("samples")) {
            SegSample s;
            s.id = e.at("id").get<int>();
            s.seed = e.at("seed").get<std::uint64_t>();
            s.labeled = e.at("labeled").get<bool>();
            s.image = read_pgm_image(dir / e.at("image").get<std::string>());
            s.mask = read_pgm_mask(dir / e.at("mask").get<std::string>());
            if (s.image.height != s.mask.height || s.image.width != s.mask.width) {
                throw std::runtime_error("sample " + std::to_string(s.id) + ": image and mask shapes differ");
            }
            out.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed manifest: ") + e.what());
    }
    return out;
}

}  // namespace corn
