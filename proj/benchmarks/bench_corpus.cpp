#include <benchmark/benchmark.h>

#include <random>
#include <set>

#include "memeqa/confound.hpp"
#include "memeqa/corpus.hpp"

using namespace memeqa;

namespace {

std::vector<MemeRecord> records(std::size_t n) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> count(2, 4), role(0, 2), name(0, 499);
    std::vector<MemeRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        MemeRecord r;
        r.meme_id = "m" + std::to_string(i);
        r.image_ref = r.meme_id + ".png";
        r.ocr_text = "caption " + std::to_string(i);
        std::set<int> used;
        const int k = count(rng);
        while (static_cast<int>(used.size()) < k) used.insert(name(rng));
        int e = 0;
        for (int id : used) {
            EntityRole ent{r.meme_id + "-e" + std::to_string(e++), "Entity " + std::to_string(id), Role(role(rng)),
                           id % 2 == 0};
            r.explanations[ent.entity_id] = ent.surface_name + " is cast this way by the caption.";
            r.entities.push_back(std::move(ent));
        }
        out.push_back(std::move(r));
    }
    return out;
}

void BM_BuildCorpus(benchmark::State& state) {
    const auto recs = records(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(build_corpus(recs, {}).instances.size());
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SplitCorpus(benchmark::State& state) {
    const auto built = build_corpus(records(static_cast<std::size_t>(state.range(0))), {}).instances;
    for (auto _ : state) benchmark::DoNotOptimize(split_corpus(built, {0.8, 0.1, 0.1}, 1).size());
}

void BM_YesNo(benchmark::State& state) {
    const auto recs = records(static_cast<std::size_t>(state.range(0)));
    const auto memes = index_records(recs);
    const auto built = build_corpus(recs, {}).instances;
    for (auto _ : state) benchmark::DoNotOptimize(apply_yesno(built, memes, 1).instances.size());
}

}  // namespace

BENCHMARK(BM_BuildCorpus)->Arg(200)->Arg(2000);
BENCHMARK(BM_SplitCorpus)->Arg(2000);
BENCHMARK(BM_YesNo)->Arg(2000);
