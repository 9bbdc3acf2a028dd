#include <stdexcept>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "corn/trainer.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

namespace fs = std::filesystem;

namespace {

corn::RunConfig tiny_config(const fs::path& root) {
    corn::RunConfig c;
    c.dataset = {12, 16, 3, 0.6};
    c.data_dir = root / "data";
    c.out_dir = root / "run";
    c.labeled_fraction = 0.3;
    c.crop_size = 12;
    c.hidden = 4;
    c.iterations = 40;
    c.unlabeled_per_class = 16;
    c.anchors_per_class = 4;
    return c;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("corn_trainer_" + name);
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

TEST_CASE("config JSON round trip and overrides") {
    corn::RunConfig c;
    c.seed = 99;
    c.alpha = 0.5;
    c.similarity = corn::Similarity::cosine;
    c.dfp_on = false;
    const auto back = corn::config_from_json(corn::to_json(c));
    CHECK(corn::to_json(back) == corn::to_json(c));

    const auto paper = corn::config_from_json(R"({"profile": "paper", "iterations": 10})");
    CHECK(paper.proj_dim == 64);
    CHECK(paper.anchors_per_class == 256);
    CHECK(paper.unlabeled_per_class == 12800);
    CHECK(paper.iterations == 10);

    const auto toy = corn::RunConfig::toy_profile();
    CHECK(toy.proj_dim == 8);
    CHECK(toy.anchors_per_class == 8);
    CHECK(toy.unlabeled_per_class == 64);
    CHECK(toy.lr == 0.01);
    CHECK(toy.momentum == 0.9);
    CHECK(toy.weight_decay == 1e-4);
    CHECK(toy.lambda_c == 0.1);
    CHECK(toy.lambda_d == 0.1);
    CHECK(toy.beta == 1.0);

    CHECK_THROWS_AS(corn::config_from_json(R"({"learning_rate": 1})"), std::invalid_argument);
    CHECK_THROWS_AS(corn::config_from_json(R"({"seed": "x"})"), std::invalid_argument);
    CHECK_THROWS_AS(corn::config_from_json("[1,2]"), std::invalid_argument);
    CHECK_THROWS_AS(corn::config_from_json(R"({"similarity": "dot"})"), std::invalid_argument);
}

TEST_CASE("objective gradient matches central differences") {
    for (const auto kind : {corn::Similarity::coral, corn::Similarity::cosine}) {
        const auto s = gradcheck::make_scenario(5, 5, kind);
        const auto rep = gradcheck::check(s);
        CHECK(rep.checked > 0);
        CHECK(rep.kinked * 100 <= rep.checked);
        CHECK_MESSAGE(rep.worst_rel <= 1e-4, "worst at " << rep.worst_where);
    }
}

TEST_CASE("projection-head gradients match when CORAL distances are of order one") {
    // With default-scale embeddings the CORAL path contributes ~1e-8 to the
    // projection gradients, below what differencing can resolve. Larger
    // projections and anchors make the distances O(1) and the check sharp.
    auto s = gradcheck::make_scenario(9, 5);
    const corn::ParamLayout L(s.state.arch);
    for (auto* branch : {&s.state.main, &s.state.aux}) {
        for (std::size_t i = L.proj_w; i < L.total; ++i) branch->params[i] *= 6.0;
    }
    corn::Matrix anchors = s.plan.anchors->values();
    for (auto& v : anchors.data()) v *= 3.0;
    s.plan.anchors = corn::FeatureMatrix(anchors);
    const auto fw = corn::forward_batch(s.state, s.images);
    const auto v = corn::evaluate_objective(s.state, fw, s.images, s.plan, s.weights, nullptr);
    MESSAGE("consistency term " << v.consistency);
    const auto rep = gradcheck::check(s, 1e-5, 1e-6);
    CHECK(rep.checked > 0);
    CHECK_MESSAGE(rep.worst_rel <= 1e-4, "worst at " << rep.worst_where);
}

TEST_CASE("objective value decomposes into its weighted terms") {
    const auto s = gradcheck::make_scenario(1, 6);
    const auto fw = corn::forward_batch(s.state, s.images);
    const auto v = corn::evaluate_objective(s.state, fw, s.images, s.plan, s.weights, nullptr);
    CHECK(v.consistency > 0.0);
    CHECK(v.total == doctest::Approx(v.supervised + v.lambdas.lambda_c * v.cps + v.lambdas.lambda_d * v.consistency));
    CHECK(v.total == doctest::Approx(corn::total_loss(v.supervised, v.cps, v.consistency, s.weights)));
}

TEST_CASE("baseline training never computes the consistency term") {
    const auto root = scratch("baseline");
    auto c = tiny_config(root);
    c.ccm_on = false;
    c.dfp_on = false;
    const auto all = corn::generate_dataset(c.dataset);
    const auto result = corn::train(c, corn::make_training_split(c, corn::train_test_split(all).train));
    REQUIRE(result.curve.size() == c.iterations);
    for (const auto& r : result.curve) CHECK(r.consistency == 0.0);
    CHECK(result.pool.filled_count() == 0);
}

TEST_CASE("full training activates the consistency term once the pool is ready") {
    const auto root = scratch("full");
    auto c = tiny_config(root);
    c.iterations = 200;
    const auto all = corn::generate_dataset(c.dataset);
    const auto result = corn::train(c, corn::make_training_split(c, corn::train_test_split(all).train));
    std::size_t active = 0;
    for (const auto& r : result.curve) active += r.consistency > 0.0;
    CHECK(active > 0);
    CHECK(result.pool.ready());
    const auto& last = result.curve.back();
    CHECK(last.lambda_c == doctest::Approx(0.1 * corn::rampup_factor(c.iterations - 1, c.iterations)));
}

TEST_CASE("plain supervised training drives the loss down") {
    const auto root = scratch("supervised");
    auto c = tiny_config(root);
    c.labeled_fraction = 1.0;
    c.lambda_c = 0.0;
    c.lambda_d = 0.0;
    c.iterations = 150;
    const auto all = corn::generate_dataset(c.dataset);
    const auto result = corn::train(c, corn::make_training_split(c, corn::train_test_split(all).train));
    const auto mean = [&](std::size_t from, std::size_t to) {
        double s = 0.0;
        for (std::size_t t = from; t < to; ++t) s += result.curve[t].total;
        return s / static_cast<double>(to - from);
    };
    for (const auto& r : result.curve) CHECK(r.total > 0.0);
    CHECK(mean(130, 150) < mean(0, 20));
}

TEST_CASE("train, eval and generate are reproducible on disk") {
    const auto root = scratch("cmds");
    auto c = tiny_config(root);
    corn::cmd_generate(c);
    const auto manifest = slurp(c.data_dir / "manifest.json");
    corn::cmd_generate(c);
    CHECK(slurp(c.data_dir / "manifest.json") == manifest);
    CHECK(corn::load_dataset(c.data_dir).samples.size() == 12);

    corn::cmd_train(c);
    const auto csv = slurp(c.out_dir / "loss.csv");
    const auto ckpt = slurp(c.out_dir / "checkpoint.bin");
    CHECK(csv.rfind("iter,L_s,l_c,l_d,lambda_c,lambda_d,total\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(c.iterations + 1));
    corn::cmd_train(c);
    CHECK(slurp(c.out_dir / "loss.csv") == csv);
    CHECK(slurp(c.out_dir / "checkpoint.bin") == ckpt);

    const auto rows = corn::cmd_eval(c.out_dir / "checkpoint.bin", c.data_dir, root / "metrics.csv");
    REQUIRE(rows.size() == 3);  // 2 test samples + mean
    CHECK(rows.back().id == "mean");
    CHECK(rows.back().dice == doctest::Approx((rows[0].dice + rows[1].dice) / 2.0).epsilon(1e-14));
    CHECK(slurp(root / "metrics.csv").rfind("id,dice,jaccard,hd95,asd\n", 0) == 0);

    CHECK_THROWS(corn::cmd_eval(root / "nope.bin", c.data_dir, root / "m.csv"));
    auto missing = c;
    missing.data_dir = root / "absent";
    CHECK_THROWS(corn::cmd_train(missing));
}

TEST_CASE("ground truth scored against itself is perfect") {
    for (const auto& s : corn::generate_dataset(5, 16, 2, 0.5)) {
        const auto m = corn::BinaryMask::from_labels(s.mask);
        const auto row = corn::evaluate_pair("x", m, m);
        CHECK(row.dice == 1.0);
        CHECK(row.hd95 == 0.0);
    }
}

TEST_CASE("ablation grid has one row per variant and fraction") {
    auto c = tiny_config(scratch("ablate"));
    c.iterations = 3;
    c.dataset.count = 60;
    const auto all = corn::generate_dataset(c.dataset);
    const auto rows = corn::run_ablation(c, all, {0.05, 0.10, 0.20}, {0});
    REQUIRE(rows.size() == 12);
    CHECK(rows[0].variant.name == "baseline");
    CHECK(rows[3].variant.ccm_on);
    CHECK(rows[3].variant.dfp_on);
    CHECK(rows[0].labeled == 2);
    CHECK(rows[4].labeled == 5);
    CHECK(rows[8].labeled == 10);
    std::ostringstream out;
    corn::write_ablation_csv(out, rows);
    const auto text = out.str();
    CHECK(text.rfind("labeled_fraction,labeled,unlabeled,variant,baseline,ccm,dfp,", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 13);
}

TEST_CASE("smoothed consistency is a trailing mean") {
    std::vector<corn::LossRecord> curve(6);
    for (std::size_t t = 0; t < 6; ++t) curve[t].consistency = static_cast<double>(t);
    const auto s = corn::smoothed_consistency(curve, 3);
    CHECK(s == std::vector<double>{0.0, 0.5, 1.0, 2.0, 3.0, 4.0});
    CHECK_THROWS(corn::smoothed_consistency(curve, 0));
}
