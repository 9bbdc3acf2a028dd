#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "corn/data.hpp"
#include "corn/metrics.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

template <typename T>
concept HasMask = requires(T t) { t.mask; };

static_assert(HasMask<corn::LabeledSample>);
static_assert(!HasMask<corn::UnlabeledSample>, "unlabeled samples must not expose a mask");
static_assert(!HasMask<corn::UnlabeledCrop>, "unlabeled crops must not expose a mask");

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("corn_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("generate_dataset is deterministic per seed") {
    const auto a = corn::generate_dataset(6, 24, 3, 0.6);
    const auto b = corn::generate_dataset(6, 24, 3, 0.6);
    const auto c = corn::generate_dataset(6, 24, 4, 0.6);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].image == b[k].image);
        CHECK(a[k].mask == b[k].mask);
    }
    CHECK_FALSE(a[0].image == c[0].image);
}

TEST_CASE("generated masks stay within the foreground fraction bounds") {
    for (const double difficulty : {0.0, 0.6, 1.0}) {
        for (const auto& s : corn::generate_dataset(40, 32, 17, difficulty)) {
            CHECK(s.image.height == 32);
            CHECK(s.mask.width == 32);
            std::size_t fg = 0;
            for (int v : s.mask.labels) {
                CHECK((v == 0 || v == 1));
                fg += v == 1;
            }
            const double frac = static_cast<double>(fg) / static_cast<double>(s.mask.size());
            CHECK(frac >= 0.05);
            CHECK(frac <= 0.6);
            for (double v : s.image.pixels) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("clean data is solved by a fixed threshold") {
    for (const auto& s : corn::generate_dataset(20, 32, 5, 0.0)) {
        corn::LabelMap pred(s.image.height, s.image.width);
        for (std::size_t i = 0; i < pred.size(); ++i) pred.labels[i] = s.image.pixels[i] > 0.5 ? 1 : 0;
        CHECK(corn::dice(corn::BinaryMask::from_labels(pred), corn::BinaryMask::from_labels(s.mask)) >= 0.99);
    }
}

TEST_CASE("generator preconditions") {
    CHECK_THROWS_AS(corn::generate_dataset(1, 32, 0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(corn::generate_dataset(4, 4, 0, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(corn::generate_dataset(4, 32, 0, 1.5), std::invalid_argument);
}

TEST_CASE("train/test split takes the first 80 percent for training") {
    const auto all = corn::generate_dataset(10, 16, 0, 0.5);
    const auto parts = corn::train_test_split(all);
    REQUIRE(parts.train.size() == 8);
    REQUIRE(parts.test.size() == 2);
    CHECK(parts.train.front().id == 0);
    CHECK(parts.test.front().id == 8);
}

TEST_CASE("labeled split sizes") {
    const auto all = corn::generate_dataset(80, 16, 1, 0.5);
    const auto count = [&](double f) {
        const auto s = corn::split(all, f, 9);
        return std::pair{s.labeled.size(), s.unlabeled.size()};
    };
    CHECK(count(0.05) == std::pair<std::size_t, std::size_t>{4, 76});
    CHECK(count(0.10) == std::pair<std::size_t, std::size_t>{8, 72});
    CHECK(count(0.20) == std::pair<std::size_t, std::size_t>{16, 64});
    CHECK(count(1.0) == std::pair<std::size_t, std::size_t>{80, 0});
    CHECK_THROWS_AS(corn::split(all, 0.0, 9), std::invalid_argument);
    CHECK_THROWS_AS(corn::split(all, 1.5, 9), std::invalid_argument);
    CHECK_THROWS_AS(corn::split(all, 0.001, 9), std::invalid_argument);

    const auto a = corn::split(all, 0.1, 3);
    const auto b = corn::split(all, 0.1, 3);
    std::set<int> ids;
    for (std::size_t k = 0; k < a.labeled.size(); ++k) {
        CHECK(a.labeled[k].id == b.labeled[k].id);
        ids.insert(a.labeled[k].id);
        CHECK(a.labeled[k].mask == all[static_cast<std::size_t>(a.labeled[k].id)].mask);
    }
    for (const auto& u : a.unlabeled) ids.insert(u.id);
    CHECK(ids.size() == 80);
}

TEST_CASE("crop_batch composition and contents") {
    const auto all = corn::generate_dataset(10, 20, 2, 0.5);
    const auto data = corn::split(all, 0.3, 1);
    const auto batch = corn::crop_batch(data, 12, 77);
    REQUIRE(batch.labeled.size() == 2);
    REQUIRE(batch.unlabeled.size() == 2);
    for (const auto& c : batch.labeled) {
        const auto& src = data.labeled[c.instance];
        CHECK(src.id == c.source_id);
        for (std::size_t y = 0; y < 12; ++y) {
            for (std::size_t x = 0; x < 12; ++x) {
                CHECK(c.image.at(y, x) == src.image.at(c.y0 + y, c.x0 + x));
                CHECK(c.mask.at(y, x) == src.mask.at(c.y0 + y, c.x0 + x));
            }
        }
    }
    const auto again = corn::crop_batch(data, 12, 77);
    CHECK(again.labeled[1].image == batch.labeled[1].image);
    CHECK(again.unlabeled[0].image == batch.unlabeled[0].image);

    const auto full = corn::crop_batch(data, 20, 5);
    for (const auto& c : full.labeled) CHECK(c.image == data.labeled[c.instance].image);

    const auto only_labeled = corn::split(all, 1.0, 1);
    CHECK(corn::crop_batch(only_labeled, 8, 1).labeled.size() == 4);
    CHECK_THROWS_AS(corn::crop_batch(data, 21, 1), std::invalid_argument);
}

TEST_CASE("PGM round trip is exact for quantized images") {
    const auto dir = scratch("pgm");
    const auto s = corn::generate_dataset(2, 16, 8, 0.7)[1];
    corn::write_pgm(dir / "i.pgm", s.image);
    corn::write_pgm(dir / "m.pgm", s.mask, 2);
    CHECK(corn::read_pgm_image(dir / "i.pgm") == s.image);
    CHECK(corn::read_pgm_mask(dir / "m.pgm") == s.mask);
    CHECK(slurp(dir / "i.pgm").rfind("P5", 0) == 0);
    CHECK_THROWS(corn::read_pgm_image(dir / "missing.pgm"));
    std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
    CHECK_THROWS(corn::read_pgm_image(dir / "bad.pgm"));
}

TEST_CASE("dataset directory round trip") {
    const auto dir = scratch("dataset");
    auto samples = corn::generate_dataset(5, 16, 4, 0.5);
    samples[2].labeled = true;
    corn::save_dataset(dir, samples, corn::DatasetManifest{{5, 16, 4, 0.5}, 0.2, 0.05, 11});
    const auto loaded = corn::load_dataset(dir);
    REQUIRE(loaded.samples.size() == 5);
    CHECK(loaded.manifest.params.count == 5);
    CHECK(loaded.manifest.split_seed == 11);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(loaded.samples[k].image == samples[k].image);
        CHECK(loaded.samples[k].mask == samples[k].mask);
        CHECK(loaded.samples[k].seed == samples[k].seed);
        CHECK(loaded.samples[k].labeled == (k == 2));
    }
    CHECK_THROWS(corn::load_dataset(dir / "nowhere"));
}
