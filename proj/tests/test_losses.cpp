#include <stdexcept>
#include <cmath>

#include "corn/losses.hpp"
#include "corn/rng.hpp"
#include "doctest.h"

using corn::Matrix;
using corn::PixelBatch;

TEST_CASE("supervised_loss examples") {
    CHECK(corn::supervised_loss(PixelBatch(Matrix::from_rows({{1, 0}, {0, 1}}), Matrix::from_rows({{1, 0}, {0, 1}}),
                                           std::vector<int>{0, 1})) <= 1e-11);
    CHECK(corn::supervised_loss(PixelBatch(Matrix::from_rows({{0.5, 0.5}}), Matrix::from_rows({{0.5, 0.5}}),
                                           std::vector<int>{0})) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-11));
    CHECK(corn::supervised_loss(PixelBatch(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0.5, 0.5}}),
                                           std::vector<int>{0})) == doctest::Approx(std::log(2.0)).epsilon(1e-11));
    CHECK_THROWS_WITH(corn::supervised_loss(PixelBatch(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1, 0}}))),
                      doctest::Contains("supervised loss requires ground truth"));
}

TEST_CASE("PixelBatch validates its inputs") {
    CHECK_THROWS_AS(PixelBatch(Matrix::from_rows({{0.7, 0.7}}), Matrix::from_rows({{0.5, 0.5}})), std::invalid_argument);
    CHECK_THROWS_AS(PixelBatch(Matrix::from_rows({{1.2, -0.2}}), Matrix::from_rows({{0.5, 0.5}})), std::invalid_argument);
    CHECK_THROWS_AS(PixelBatch(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1, 0}, {0, 1}})), std::invalid_argument);
    CHECK_THROWS_AS(PixelBatch(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1, 0}}), std::vector<int>{2}),
                    std::invalid_argument);
    CHECK_THROWS_AS(PixelBatch(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{1, 0}}), std::vector<int>{0, 1}),
                    std::invalid_argument);
}

TEST_CASE("cps_loss examples") {
    CHECK(corn::cps_loss(PixelBatch(Matrix::from_rows({{0, 1}}), Matrix::from_rows({{0, 1}}))) <= 1e-11);
    const PixelBatch split(Matrix::from_rows({{0.9, 0.1}}), Matrix::from_rows({{0.1, 0.9}}));
    CHECK(split.y1() == std::vector<int>{0});
    CHECK(split.y2() == std::vector<int>{1});
    // CE(onehot(y2), p1) + CE(onehot(y1), p2) = -ln p1[1] - ln p2[0].
    CHECK(corn::cps_loss(split) == doctest::Approx(-std::log(0.1) - std::log(0.1)).epsilon(1e-10));
    const PixelBatch same(Matrix::from_rows({{0.6, 0.4}}), Matrix::from_rows({{0.6, 0.4}}));
    CHECK(corn::cps_loss(same) == doctest::Approx(-2 * std::log(0.6)).epsilon(1e-10));
    CHECK(corn::cps_loss(same) == doctest::Approx(1.0217).epsilon(1e-4));
}

TEST_CASE("cps pseudo-labels break ties toward the lowest class") {
    const PixelBatch tie(Matrix::from_rows({{0.5, 0.5}}), Matrix::from_rows({{0.25, 0.75}}));
    CHECK(tie.y1() == std::vector<int>{0});
}

TEST_CASE("loss gradients match central differences") {
    corn::Rng rng(12);
    Matrix p1(4, 3), p2(4, 3);
    for (std::size_t r = 0; r < 4; ++r) {
        double s1 = 0, s2 = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            p1(r, c) = 0.1 + rng.uniform();
            p2(r, c) = 0.1 + rng.uniform();
            s1 += p1(r, c);
            s2 += p2(r, c);
        }
        for (std::size_t c = 0; c < 3; ++c) {
            p1(r, c) /= s1;
            p2(r, c) /= s2;
        }
    }
    const std::vector<int> labels{0, 2, 1, 1};
    const auto y1 = corn::argmax_rows(p1);
    const auto y2 = corn::argmax_rows(p2);
    const auto sup = corn::supervised_loss_grad(p1, p2, labels);
    const auto cps = corn::cps_loss_grad(p1, p2, y1, y2);
    CHECK(sup.value == doctest::Approx(corn::supervised_loss(PixelBatch(p1, p2, labels))).epsilon(1e-14));
    CHECK(cps.value == doctest::Approx(corn::cps_loss(PixelBatch(p1, p2))).epsilon(1e-14));
    const double h = 1e-7;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        auto a = p1, b = p1;
        a.data()[i] += h;
        b.data()[i] -= h;
        CHECK(sup.grad_p1.data()[i] == doctest::Approx((corn::supervised_loss_grad(a, p2, labels).value - corn::supervised_loss_grad(b, p2, labels).value) / (2 * h)).epsilon(1e-6));
        CHECK(cps.grad_p1.data()[i] == doctest::Approx((corn::cps_loss_grad(a, p2, y1, y2).value - corn::cps_loss_grad(b, p2, y1, y2).value) / (2 * h)).epsilon(1e-6));
        a = p2;
        b = p2;
        a.data()[i] += h;
        b.data()[i] -= h;
        CHECK(cps.grad_p2.data()[i] == doctest::Approx((corn::cps_loss_grad(p1, a, y1, y2).value - corn::cps_loss_grad(p1, b, y1, y2).value) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("rampup examples") {
    CHECK(corn::rampup_factor(100, 100) == 1.0);
    CHECK(corn::rampup_factor(0, 100) == doctest::Approx(std::exp(-5.0)).epsilon(1e-14));
    CHECK(corn::rampup_factor(50, 100) == doctest::Approx(std::exp(-1.25)).epsilon(1e-14));
    CHECK(corn::rampup_factor(50, 100) == doctest::Approx(0.2865).epsilon(1e-3));
    CHECK(corn::rampup_factor(500, 100) == 1.0);  // clamped

    const auto at_end = corn::rampup_weight({0.1, 0.1, 1.0, 7, 7});
    CHECK(at_end.lambda_c == 0.1);
    CHECK(at_end.lambda_d == 0.1);
    const auto at_start = corn::rampup_weight({0.1, 0.1, 1.0, 0, 7});
    CHECK(at_start.lambda_c == doctest::Approx(0.000674).epsilon(1e-3));
    CHECK(at_start.lambda_d == at_start.lambda_c);
    CHECK_THROWS_AS(corn::rampup_weight({0.1, 0.1, 1.0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(corn::rampup_weight({-0.1, 0.1, 1.0, 0, 10}), std::invalid_argument);
}

TEST_CASE("total_loss examples") {
    CHECK(corn::total_loss(1.0, 0.0, 0.0, {0.1, 0.1, 1.0, 3, 10}) == 1.0);
    CHECK(corn::total_loss(0.5, 1.0, 2.0, {0.1, 0.1, 1.0, 10, 10}) == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(corn::total_loss(0.0, 2.0, 3.0, {0.1, 0.1, 1.0, 0, 10}) == doctest::Approx(0.1 * std::exp(-5.0) * 5.0).epsilon(1e-12));
}
