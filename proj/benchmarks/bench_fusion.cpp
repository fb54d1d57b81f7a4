#include <benchmark/benchmark.h>

#include "memeqa/fusion.hpp"

using namespace memeqa::fusion;

namespace {

// text tokens, image patches, hidden dim; vision dim and key dim follow hidden
State sized(const benchmark::State& s) {
    const int t = static_cast<int>(s.range(0)), p = static_cast<int>(s.range(1)), d = static_cast<int>(s.range(2));
    return random_state(1, t, p, d, d, d, GateMode::per_dimension);
}

void BM_Forward(benchmark::State& state) {
    const auto st = sized(state);
    for (auto _ : state) benchmark::DoNotOptimize(forward(st).fused.output.data());
}

void BM_Gradients(benchmark::State& state) {
    const auto st = sized(state);
    for (auto _ : state) benchmark::DoNotOptimize(gradients(st));
}

}  // namespace

BENCHMARK(BM_Forward)->Args({32, 49, 64})->Args({128, 196, 256});
BENCHMARK(BM_Gradients)->Args({32, 49, 64})->Args({128, 196, 256});
