#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memeqa/corpus.hpp"

namespace memeqa::fixtures {

struct FixtureOptions {
    std::size_t records = 10;
    std::size_t min_entities = 1;
    std::size_t max_entities = 4;
    std::uint64_t seed = 1;
    // Role weights follow the US-Politics annotation mix.
    double hero_weight = 0.17;
    double villain_weight = 0.59;
    double victim_weight = 0.24;
    double person_rate = 0.4;
    std::size_t name_pool = 400;
};

// Deterministic ExHVV-shaped records: distinct names per meme, every entity explained.
std::vector<MemeRecord> synthetic_records(const FixtureOptions& options);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

// Root of the source tree, for data files.
std::filesystem::path source_dir();

}  // namespace memeqa::fixtures
