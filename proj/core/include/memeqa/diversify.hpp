#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "memeqa/backends.hpp"
#include "memeqa/corpus.hpp"
#include "memeqa/prompts.hpp"

namespace memeqa {

inline constexpr std::size_t kRephrasingCount = 5;

struct RephrasingBatch {
    std::string original_question;
    std::vector<std::string> variants;  // exactly kRephrasingCount
    std::size_t chosen_index = 0;
    std::string backend_id;

    const std::string& chosen() const { return variants.at(chosen_index); }
};

// Pulls list items out of free-form model output. Items must carry a "1." / "1)" / "-" / "*"
// marker; unmarked lines (preambles, sign-offs) are ignored, surrounding quotes stripped.
std::vector<std::string> parse_variants(std::string_view raw);

struct DiversifyOptions {
    double temperature = 0.7;
    double retry_temperature_bump = 0.3;
    int max_tokens = 256;
    std::size_t max_in_flight = 4;
};

// Asks the backend for five meaning-preserving rewrites and picks one uniformly.
// One retry at a higher temperature; throws DiversificationFailed carrying the raw reply.
RephrasingBatch rephrase_question(const std::string& question, Backend& backend, std::uint64_t rng_seed,
                                  const PromptTemplates& templates = PromptTemplates::defaults(),
                                  const DiversifyOptions& options = {});

struct DiversifySummary {
    std::size_t selected = 0;
    std::size_t diversified = 0;
    std::vector<std::pair<std::string, std::string>> failures;  // instance_id, reason
};

struct DiversifyResult {
    std::vector<QAInstance> instances;  // input order
    std::vector<RephrasingBatch> batches;
    DiversifySummary summary;
};

// Replaces the question of a seeded `fraction` of instances; options, answers and
// explanations are never touched. Failed instances keep their original question.
DiversifyResult diversify_corpus(const std::vector<QAInstance>& instances, Backend& backend, std::uint64_t rng_seed,
                                 double fraction = 1.0, const PromptTemplates& templates = PromptTemplates::defaults(),
                                 const DiversifyOptions& options = {});

}  // namespace memeqa
