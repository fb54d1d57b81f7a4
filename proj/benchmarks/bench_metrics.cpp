#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "memeqa/metrics.hpp"

namespace {

std::string sentence(std::mt19937_64& rng, int words) {
    static const char* vocab[] = {"the", "meme", "mocks", "senator", "as",   "a",     "villain",
                                  "for", "taxes", "crowd", "cheers", "hero", "vote", "news"};
    std::uniform_int_distribution<int> pick(0, 13);
    std::string s;
    for (int i = 0; i < words; ++i) {
        if (i) s += ' ';
        s += vocab[pick(rng)];
    }
    return s;
}

template <typename F>
void run_pair(benchmark::State& state, F&& f) {
    std::mt19937_64 rng(7);
    const auto hyp = sentence(rng, static_cast<int>(state.range(0)));
    const auto ref = sentence(rng, static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(f(hyp, ref));
    state.SetItemsProcessed(state.iterations());
}

void BM_Bleu4(benchmark::State& s) { run_pair(s, [](auto& h, auto& r) { return memeqa::metrics::bleu(h, r, 4); }); }
void BM_RougeL(benchmark::State& s) { run_pair(s, [](auto& h, auto& r) { return memeqa::metrics::rouge_l(h, r); }); }
void BM_Meteor(benchmark::State& s) { run_pair(s, [](auto& h, auto& r) { return memeqa::metrics::meteor(h, r); }); }
void BM_Chrf(benchmark::State& s) { run_pair(s, [](auto& h, auto& r) { return memeqa::metrics::chrf(h, r).score; }); }
void BM_ErrorRates(benchmark::State& s) {
    run_pair(s, [](auto& h, auto& r) { return memeqa::metrics::error_rates(h, r).cer; });
}

}  // namespace

BENCHMARK(BM_Bleu4)->Arg(16)->Arg(64);
BENCHMARK(BM_RougeL)->Arg(16)->Arg(64);
BENCHMARK(BM_Meteor)->Arg(16)->Arg(64);
BENCHMARK(BM_Chrf)->Arg(16)->Arg(64);
BENCHMARK(BM_ErrorRates)->Arg(16)->Arg(64);
