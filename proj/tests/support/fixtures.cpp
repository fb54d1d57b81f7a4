#include "fixtures.hpp"

#include <atomic>
#include <random>
#include <set>

#include <unistd.h>

namespace memeqa::fixtures {

namespace {

const char* const kFirst[] = {"red", "blue", "green", "silent", "loud", "old", "young", "northern", "southern",
                              "urban", "rural", "federal", "local", "eastern", "western", "free", "united",
                              "national", "liberal", "radical"};
const char* const kSecond[] = {"party", "senator", "union", "media", "voters", "governor", "lobby", "movement",
                               "council", "press", "church", "army", "bank", "students", "workers",
                               "farmers", "police", "court", "league", "network"};

std::string pool_name(std::size_t i) {
    const std::size_t a = i % 20, b = (i / 20) % 20, round = i / 400;
    std::string name = std::string(kFirst[a]) + " " + kSecond[b];
    if (round > 0) name += " " + std::to_string(round);
    return name;
}

}  // namespace

std::vector<MemeRecord> synthetic_records(const FixtureOptions& o) {
    std::mt19937_64 rng(o.seed);
    std::discrete_distribution<int> role({o.hero_weight, o.villain_weight, o.victim_weight});
    std::uniform_int_distribution<std::size_t> count(o.min_entities, o.max_entities);
    std::uniform_int_distribution<std::size_t> name(0, o.name_pool - 1);
    std::bernoulli_distribution person(o.person_rate);

    std::vector<MemeRecord> out;
    out.reserve(o.records);
    for (std::size_t i = 0; i < o.records; ++i) {
        MemeRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "meme%05zu", i);
        r.meme_id = id;
        r.image_ref = "images/" + r.meme_id + ".png";
        r.ocr_text = "caption of " + r.meme_id;
        std::set<std::size_t> used;
        const std::size_t n = count(rng);
        while (r.entities.size() < n) {
            const auto k = name(rng);
            if (!used.insert(k).second) continue;
            EntityRole e;
            e.entity_id = "e" + std::to_string(r.entities.size());
            e.surface_name = pool_name(k);
            e.role = static_cast<Role>(role(rng));
            e.is_person = person(rng);
            r.explanations[e.entity_id] =
                "The meme casts " + e.surface_name + " as a " + std::string(role_name(e.role)) + ".";
            r.entities.push_back(std::move(e));
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::filesystem::path temp_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    auto p = std::filesystem::temp_directory_path() /
             ("memeqa-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::filesystem::path source_dir() { return MEMEQA_SOURCE_DIR; }

}  // namespace memeqa::fixtures
