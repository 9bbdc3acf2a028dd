#include <benchmark/benchmark.h>

#include "corn/coral.hpp"
#include "corn/data.hpp"
#include "corn/metrics.hpp"
#include "corn/model.hpp"
#include "corn/rng.hpp"

namespace {

corn::FeatureMatrix random_features(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    corn::Rng rng(seed);
    corn::Matrix m(rows, cols);
    for (auto& v : m.data()) v = rng.normal();
    return corn::FeatureMatrix(std::move(m));
}

void BM_CorrelationMatrix(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const auto dim = static_cast<std::size_t>(state.range(1));
    const auto unl = random_features(m, dim, 1);
    const auto anc = random_features(16, dim, 2);
    for (auto _ : state) benchmark::DoNotOptimize(corn::correlation_matrix(unl, anc));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(m) * 16);
}
BENCHMARK(BM_CorrelationMatrix)->Args({128, 8})->Args({128, 64});

void BM_ForwardBackward(benchmark::State& state) {
    const auto side = static_cast<std::size_t>(state.range(0));
    const corn::Arch arch{1, 8, 2, 8};
    const auto model = corn::init_model(arch, 1, 2);
    const corn::Image img(side, side, 0.5);
    for (auto _ : state) {
        const auto out = corn::forward(model, img);
        auto grads = corn::zero_gradients(arch);
        corn::OutputGrads og;
        og.probs_main = corn::Matrix(side * side, 2, 1e-3);
        corn::backward(model, out, og, grads);
        benchmark::DoNotOptimize(grads);
    }
}
BENCHMARK(BM_ForwardBackward)->Arg(24)->Arg(32);

void BM_Hd95(benchmark::State& state) {
    const auto samples = corn::generate_dataset(corn::DatasetParams{2, static_cast<std::size_t>(state.range(0)), 3, 0.6});
    const auto a = corn::BinaryMask::from_labels(samples[0].mask);
    const auto b = corn::BinaryMask::from_labels(samples[1].mask);
    for (auto _ : state) benchmark::DoNotOptimize(corn::hd95(a, b));
}
BENCHMARK(BM_Hd95)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
