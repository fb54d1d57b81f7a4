#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeqa/roles.hpp"

namespace memeqa {

struct EntityRole {
    std::string entity_id;
    std::string surface_name;
    Role role = Role::hero;
    bool is_person = false;  // selects "Who" over "What" in templated questions
};

struct MemeRecord {
    std::string meme_id;
    std::string image_ref;
    std::string ocr_text;
    std::vector<EntityRole> entities;
    std::map<std::string, std::string> explanations;  // entity_id -> gold explanation

    const EntityRole* find_entity(std::string_view entity_id) const;
};

enum class Split { train, val, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct Provenance {
    bool original = false;
    bool diversified = false;
    bool yesno = false;
    bool none_all = false;
    bool none_train = false;

    bool operator==(const Provenance&) const = default;
};

struct QAInstance {
    std::string instance_id;
    std::string meme_id;
    std::string question;
    std::vector<std::string> options;
    std::size_t correct_index = 0;
    std::string gold_explanation;
    std::optional<Split> split;
    Provenance provenance;

    // Construction keys carried so later transforms can re-template the question.
    std::string entity_id;
    Role role = Role::hero;
    std::string synonym;

    const std::string& answer_surface() const { return options.at(correct_index); }

    bool operator==(const QAInstance&) const = default;
};

void to_json(nlohmann::json& j, const EntityRole& e);
void from_json(const nlohmann::json& j, EntityRole& e);
void to_json(nlohmann::json& j, const MemeRecord& r);
void from_json(const nlohmann::json& j, MemeRecord& r);
void to_json(nlohmann::json& j, const QAInstance& q);
void from_json(const nlohmann::json& j, QAInstance& q);

// Throws ValidationError naming the offending record.
void validate_record(const MemeRecord& record);
void validate_instance(const QAInstance& instance);

std::vector<MemeRecord> load_records(const std::filesystem::path& path);
std::vector<QAInstance> load_instances(const std::filesystem::path& path);
std::string instances_to_jsonl(const std::vector<QAInstance>& instances);
void save_instances(const std::filesystem::path& path, const std::vector<QAInstance>& instances);

// "Who|What is <synonym> in this meme?"
std::string make_question(Role role, const RoleSynonymTable& table, std::size_t synonym_index,
                          bool is_person = false);
std::string make_question(std::string_view synonym, bool is_person = false);

// Distinct surface names that never carry the answer's role inside `record`.
// Falls back to `corpus_pool` when the meme itself has too few candidates.
std::vector<std::string> sample_distractors(const MemeRecord& record, const EntityRole& answer,
                                            std::size_t k, const std::vector<EntityRole>& corpus_pool,
                                            std::uint64_t rng_seed,
                                            const std::string& instance_id = {});

// Every entity in the corpus, deduplicated by normalized surface name and sorted.
std::vector<EntityRole> build_entity_pool(const std::vector<MemeRecord>& records);

struct CorpusConfig {
    std::size_t num_options = 4;
    std::uint64_t seed = 0;
    RoleSynonymTable synonyms = RoleSynonymTable::defaults();
};

struct BuildResult {
    std::vector<QAInstance> instances;  // sorted by instance_id
    std::vector<std::string> warnings;
};

BuildResult build_corpus(const std::vector<MemeRecord>& records, const CorpusConfig& config);

// Role-stratified, meme-grouped assignment of train/val/test. Returns instances in input order.
std::vector<QAInstance> split_corpus(std::vector<QAInstance> instances, const std::vector<double>& ratios,
                                     std::uint64_t rng_seed);

// meme_id -> record, throws ValidationError on duplicates.
std::map<std::string, MemeRecord> index_records(const std::vector<MemeRecord>& records);

}  // namespace memeqa
