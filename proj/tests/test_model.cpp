#include <stdexcept>
#include <cmath>
#include <cstring>
#include <sstream>

#include "corn/model.hpp"
#include "corn/rng.hpp"
#include "doctest.h"

using corn::Arch;
using corn::Image;

namespace {

// FNV-1a over the raw bytes of every output value.
std::uint64_t hash_output(const corn::ForwardOutput& out) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&](const corn::Matrix& m) {
        for (double v : m.data()) {
            unsigned char bytes[sizeof v];
            std::memcpy(bytes, &v, sizeof v);
            for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ULL;
        }
    };
    mix(out.main.probs);
    mix(out.main.embed);
    mix(out.aux.probs);
    mix(out.aux.embed);
    return h;
}

Image ramp_image(std::size_t h, std::size_t w) {
    Image img(h, w);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(i % 7) / 6.0;
    return img;
}

}  // namespace

TEST_CASE("parameter count matches a per-layer count") {
    const Arch arch{1, 16, 2, 8};
    std::size_t count = 0;
    count += 16 * 1 * 3 * 3 + 16;   // conv1
    count += 16 * 16 * 3 * 3 + 16;  // conv2
    count += 2 * 16 + 2;            // class head
    count += 8 * 16 + 8;            // projection
    CHECK(arch.parameter_count() == count);
    CHECK(count == 2650);
    const auto state = corn::init_model(arch, 1, 2);
    CHECK(state.main.params.size() == count);
    CHECK(state.aux.params.size() == count);
}

TEST_CASE("init_model is deterministic and rejects shared seeds") {
    const Arch arch{1, 4, 3, 5};
    CHECK(corn::init_model(arch, 3, 4) == corn::init_model(arch, 3, 4));
    CHECK_FALSE(corn::init_model(arch, 3, 4).main == corn::init_model(arch, 3, 4).aux);
    CHECK_THROWS_WITH(corn::init_model(arch, 9, 9), doctest::Contains("branches must be independently initialized"));
}

TEST_CASE("init_model follows the declared scales") {
    const Arch arch{1, 8, 2, 8};
    const auto s = corn::init_model(arch, 10, 20);
    const corn::ParamLayout L(arch);
    const double conv1_bound = std::sqrt(6.0 / 9.0);
    const double conv2_bound = std::sqrt(6.0 / 72.0);
    const double head_bound = 1.0 / std::sqrt(8.0);
    for (std::size_t i = L.conv1_w; i < L.conv1_b; ++i) CHECK(std::abs(s.main.params[i]) <= conv1_bound);
    for (std::size_t i = L.conv2_w; i < L.conv2_b; ++i) CHECK(std::abs(s.main.params[i]) <= conv2_bound);
    for (std::size_t i = L.head_w; i < L.head_b; ++i) CHECK(std::abs(s.main.params[i]) <= head_bound);
    for (std::size_t i = L.proj_w; i < L.proj_b; ++i) CHECK(std::abs(s.main.params[i]) <= head_bound);
    for (std::size_t i = L.conv1_b; i < L.conv2_w; ++i) CHECK(s.main.params[i] == 0.0);
    for (std::size_t i = L.head_b; i < L.proj_w; ++i) CHECK(s.main.params[i] == 0.0);
    for (double v : s.main.velocity) CHECK(v == 0.0);
}

TEST_CASE("zero model on a zero image predicts uniform classes") {
    const Arch arch{1, 4, 3, 2};
    const auto out = corn::forward(corn::zero_model(arch), Image(5, 4));
    for (double v : out.main.probs.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    for (double v : out.aux.probs.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("forward produces distributions and shapes per pixel") {
    const Arch arch{1, 8, 2, 8};
    const auto state = corn::init_model(arch, 1, 2);
    corn::Rng rng(0);
    Image img(7, 5);
    for (auto& v : img.pixels) v = rng.uniform();
    const auto out = corn::forward(state, img);
    CHECK(out.main.probs.rows() == 35);
    CHECK(out.main.probs.cols() == 2);
    CHECK(out.main.embed.cols() == 8);
    for (std::size_t r = 0; r < 35; ++r) {
        CHECK(out.main.probs(r, 0) + out.main.probs(r, 1) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(out.aux.probs(r, 0) + out.aux.probs(r, 1) == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK(corn::predict_probs(arch, state.main.params, img) == out.main.probs);
    CHECK_THROWS_AS(corn::forward(state, Image(0, 3)), std::invalid_argument);
}

TEST_CASE("forward output hash is frozen") {
    const auto state = corn::init_model(Arch{1, 4, 2, 3}, 101, 202);
    const auto out = corn::forward(state, ramp_image(5, 6));
    CHECK(hash_output(out) == 15080137966325714084ULL);
}

TEST_CASE("backward vanishes at a perfect supervised fit") {
    const Arch arch{1, 4, 2, 3};
    auto state = corn::zero_model(arch);
    const corn::ParamLayout L(arch);
    state.main.params[L.head_b] = 40.0;
    state.aux.params[L.head_b] = 40.0;
    const Image img = ramp_image(4, 4);
    const auto out = corn::forward(state, img);
    // d CE(onehot(0), p) / d p = -1 / p on class 0, zero elsewhere.
    corn::OutputGrads og;
    og.probs_main = corn::Matrix(16, 2);
    og.probs_aux = corn::Matrix(16, 2);
    for (std::size_t r = 0; r < 16; ++r) {
        og.probs_main(r, 0) = -1.0 / out.main.probs(r, 0) / 16.0;
        og.probs_aux(r, 0) = -1.0 / out.aux.probs(r, 0) / 16.0;
    }
    auto grads = corn::zero_gradients(arch);
    corn::backward(state, out, og, grads);
    double norm = 0.0;
    for (double g : grads.main) norm += g * g;
    for (double g : grads.aux) norm += g * g;
    CHECK(std::sqrt(norm) <= 1e-8);
}

TEST_CASE("backward refuses a cache from before an optimizer step") {
    const Arch arch{1, 2, 2, 2};
    auto state = corn::init_model(arch, 1, 2);
    const auto out = corn::forward(state, Image(3, 3, 0.5));
    auto grads = corn::zero_gradients(arch);
    corn::sgd_step(state, grads);
    CHECK_THROWS_WITH(corn::backward(state, out, {}, grads), doctest::Contains("stale cache"));
}

TEST_CASE("sgd_step follows the momentum recursion") {
    const Arch arch{1, 2, 2, 2};
    auto state = corn::init_model(arch, 1, 2);
    const auto before = state;

    SUBCASE("zero gradient, zero velocity and no decay leave parameters unchanged") {
        corn::sgd_step(state, corn::zero_gradients(arch), {0.01, 0.9, 0.0});
        CHECK(state.main.params == before.main.params);
        CHECK(state.aux.params == before.aux.params);
        CHECK(state.version == before.version + 1);
    }
    SUBCASE("theta = 1, g = 1, v = 0 steps to 0.99") {
        for (auto& v : state.main.params) v = 1.0;
        auto g = corn::zero_gradients(arch);
        std::fill(g.main.begin(), g.main.end(), 1.0);
        corn::sgd_step(state, g, {0.01, 0.9, 0.0});
        for (double v : state.main.params) CHECK(v == doctest::Approx(0.99).epsilon(1e-15));
    }
    SUBCASE("three steps match an explicit recursion") {
        corn::Rng rng(4);
        std::vector<double> theta = state.main.params, vel(theta.size(), 0.0);
        for (int step = 0; step < 3; ++step) {
            auto g = corn::zero_gradients(arch);
            for (auto& x : g.main) x = rng.normal();
            for (std::size_t i = 0; i < theta.size(); ++i) {
                vel[i] = 0.9 * vel[i] + g.main[i] + 1e-4 * theta[i];
                theta[i] -= 0.01 * vel[i];
            }
            corn::sgd_step(state, g);
        }
        for (std::size_t i = 0; i < theta.size(); ++i) CHECK(state.main.params[i] == doctest::Approx(theta[i]).epsilon(1e-14));
    }
    SUBCASE("non-finite gradient aborts") {
        auto g = corn::zero_gradients(arch);
        g.aux[0] = std::nan("");
        CHECK_THROWS_WITH(corn::sgd_step(state, g), doctest::Contains("diverged"));
    }
}

TEST_CASE("checkpoint round trips byte for byte") {
    auto state = corn::init_model(Arch{1, 3, 2, 4}, 5, 6);
    auto g = corn::zero_gradients(state.arch);
    g.main[1] = 0.5;
    corn::sgd_step(state, g);
    std::stringstream a;
    corn::save_checkpoint(state, a);
    const auto loaded = corn::load_checkpoint(a);
    CHECK(loaded == state);
    std::stringstream b;
    corn::save_checkpoint(loaded, b);
    CHECK(a.str() == b.str());
    std::stringstream truncated(a.str().substr(0, a.str().size() / 2));
    CHECK_THROWS(corn::load_checkpoint(truncated));
    std::stringstream wrong("NOPE0000000000000000");
    CHECK_THROWS(corn::load_checkpoint(wrong));
}
