#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "memeqa/corpus.hpp"

namespace memeqa {

inline constexpr const char* kYes = "yes";
inline constexpr const char* kNo = "no";
inline constexpr const char* kNoneOption = "None";
inline constexpr double kNoneFraction = 0.2;

enum class ConfoundMode { yesno, none_all, none_train };

ConfoundMode parse_confound_mode(std::string_view name);  // yesno | none-all | none-train

struct ConfoundSummary {
    std::size_t total = 0;
    std::size_t transformed = 0;  // NO cases for yesno, None answers for none-*
    std::size_t yes = 0;
    std::size_t fallbacks = 0;    // NO drawn but impossible, emitted as YES
    std::size_t skipped = 0;      // selected for None but no role class is free in the meme
    std::vector<std::string> log;
};

struct ConfoundResult {
    std::vector<QAInstance> instances;  // input order
    ConfoundSummary summary;
};

// "Is <answer> <question without its first two words>" when the templated question
// reads "Who|What is <synonym> in this meme?".
std::string yes_question(const QAInstance& instance);

// Each instance becomes a yes/no question with probability 1/2. NO cases swap the
// synonym for one from a role class the entity does not hold in its meme.
ConfoundResult apply_yesno(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                           std::uint64_t rng_seed, const RoleSynonymTable& table = RoleSynonymTable::defaults());

// Appends "None" to every option set and, for 20% of each split, swaps the synonym to
// a role class no entity in the meme carries so that "None" becomes correct.
ConfoundResult apply_none_all(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                              std::uint64_t rng_seed, const RoleSynonymTable& table = RoleSynonymTable::defaults());

// As apply_none_all, but only train instances are swapped; val/test keep their answers.
ConfoundResult apply_none_train(const std::vector<QAInstance>& instances,
                                const std::map<std::string, MemeRecord>& memes, std::uint64_t rng_seed,
                                const RoleSynonymTable& table = RoleSynonymTable::defaults());

ConfoundResult apply_confound(ConfoundMode mode, const std::vector<QAInstance>& instances,
                              const std::map<std::string, MemeRecord>& memes, std::uint64_t rng_seed,
                              const RoleSynonymTable& table = RoleSynonymTable::defaults());

}  // namespace memeqa
