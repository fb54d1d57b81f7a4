#include "memeqa/confound.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "memeqa/errors.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

ConfoundMode parse_confound_mode(std::string_view name) {
    if (name == "yesno") return ConfoundMode::yesno;
    if (name == "none-all" || name == "none_all") return ConfoundMode::none_all;
    if (name == "none-train" || name == "none_train") return ConfoundMode::none_train;
    throw ConfigError("unknown confound mode: '" + std::string(name) + "'");
}

namespace {

const MemeRecord& meme_for(const QAInstance& q, const std::map<std::string, MemeRecord>& memes) {
    const auto it = memes.find(q.meme_id);
    if (it == memes.end()) throw ConfoundError("instance " + q.instance_id + ": unknown meme " + q.meme_id);
    return it->second;
}

bool is_word_byte(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u >= 0x80;
}

// Byte offset of `phrase` as a whole phrase inside `text`.
std::optional<std::size_t> find_phrase(const std::string& text, const std::string& phrase) {
    if (phrase.empty()) return std::nullopt;
    std::size_t pos = text.find(phrase);
    while (pos != std::string::npos) {
        const bool left = pos == 0 || !is_word_byte(text[pos - 1]);
        const std::size_t end = pos + phrase.size();
        const bool right = end >= text.size() || !is_word_byte(text[end]);
        if (left && right) return pos;
        pos = text.find(phrase, pos + 1);
    }
    return std::nullopt;
}

// The synonym the question was templated with, if it still appears in the text.
std::optional<std::string> question_synonym(const QAInstance& q, const RoleSynonymTable& table) {
    if (!q.synonym.empty() && find_phrase(q.question, q.synonym)) return q.synonym;
    if (auto m = table.find_in(q.question)) return m->synonym;
    return std::nullopt;
}

std::string replace_phrase(const std::string& text, const std::string& from, const std::string& to) {
    const auto pos = find_phrase(text, from);
    if (!pos) return text;
    return text.substr(0, *pos) + to + text.substr(*pos + from.size());
}

std::vector<std::string> synonyms_excluding(const std::set<Role>& excluded, const RoleSynonymTable& table) {
    std::vector<std::string> out;
    for (Role r : kAllRoles) {
        if (excluded.count(r)) continue;
        for (const auto& s : table.synonyms(r)) out.push_back(s);
    }
    return out;
}

std::set<Role> entity_roles(const MemeRecord& meme, const QAInstance& q) {
    const auto answer_key = normalize_name(q.answer_surface());
    std::set<Role> roles;
    for (const auto& e : meme.entities) {
        if (e.entity_id == q.entity_id || normalize_name(e.surface_name) == answer_key) roles.insert(e.role);
    }
    return roles;
}

std::set<Role> meme_roles(const MemeRecord& meme) {
    std::set<Role> roles;
    for (const auto& e : meme.entities) roles.insert(e.role);
    return roles;
}

}  // namespace

std::string yes_question(const QAInstance& instance) {
    const auto words = split_whitespace(instance.question);
    if (words.size() < 3) {
        throw ConfoundError("instance " + instance.instance_id + ": question too short for yes/no form");
    }
    std::string rest = join(std::vector<std::string>(words.begin() + 2, words.end()), " ");
    if (rest.back() != '?') rest += '?';
    return "Is " + instance.answer_surface() + " " + rest;
}

ConfoundResult apply_yesno(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                           std::uint64_t rng_seed, const RoleSynonymTable& table) {
    ConfoundResult result;
    result.instances.reserve(instances.size());
    result.summary.total = instances.size();

    for (const auto& original : instances) {
        const auto& meme = meme_for(original, memes);
        Rng rng(derive_seed(rng_seed, {original.instance_id, "yesno"}));
        const bool draw_yes = rng.bernoulli(0.5);

        QAInstance q = original;
        std::string question = yes_question(original);
        bool answer_yes = draw_yes;

        if (!draw_yes) {
            const auto synonym = question_synonym(original, table);
            // Prefer role classes nobody in the meme holds; fall back to ones this entity lacks.
            auto candidates = synonyms_excluding(meme_roles(meme), table);
            if (candidates.empty()) candidates = synonyms_excluding(entity_roles(meme, original), table);
            if (!synonym || candidates.empty()) {
                answer_yes = true;
                ++result.summary.fallbacks;
                result.summary.log.push_back(original.instance_id + ": NO case impossible, kept YES");
            } else {
                const auto& replacement = candidates[rng.index(candidates.size())];
                question = replace_phrase(question, *synonym, replacement);
                q.synonym = replacement;
            }
        }

        q.question = std::move(question);
        q.options = {kYes, kNo};
        q.correct_index = answer_yes ? 0 : 1;
        q.provenance.yesno = true;
        if (answer_yes) ++result.summary.yes;
        else ++result.summary.transformed;
        result.instances.push_back(std::move(q));
    }
    return result;
}

namespace {

ConfoundResult apply_none(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                          std::uint64_t rng_seed, const RoleSynonymTable& table, bool train_only) {
    ConfoundResult result;
    result.instances = instances;
    result.summary.total = instances.size();

    // Group by split; unsplit corpora form a single group under none-all.
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& q = instances[i];
        if (train_only && !q.split) {
            throw PreconditionError("none-train needs split tags; instance " + q.instance_id + " has none");
        }
        const int group = q.split ? static_cast<int>(*q.split) : -1;
        if (train_only && group != static_cast<int>(Split::train)) continue;
        groups[group].push_back(i);
    }

    std::vector<std::optional<std::string>> swap_to(instances.size());
    for (auto& [group, members] : groups) {
        const auto target = static_cast<std::size_t>(std::llround(kNoneFraction * static_cast<double>(members.size())));
        std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
        ranked.reserve(members.size());
        for (auto i : members) ranked.emplace_back(derive_seed(rng_seed, {instances[i].instance_id, "none"}), i);
        std::sort(ranked.begin(), ranked.end());

        std::size_t taken = 0;
        for (const auto& [key, i] : ranked) {
            if (taken == target) break;
            const auto& q = instances[i];
            const auto synonym = question_synonym(q, table);
            const auto candidates = synonyms_excluding(meme_roles(meme_for(q, memes)), table);
            if (!synonym || candidates.empty()) {
                ++result.summary.skipped;
                result.summary.log.push_back(q.instance_id + ": no free role class for None swap");
                continue;
            }
            Rng rng(key);
            swap_to[i] = candidates[rng.index(candidates.size())];
            ++taken;
        }
        if (taken < target) {
            result.summary.log.push_back("group " + std::to_string(group) + ": only " + std::to_string(taken) +
                                         " of " + std::to_string(target) + " None swaps possible");
        }
    }

    for (std::size_t i = 0; i < result.instances.size(); ++i) {
        auto& q = result.instances[i];
        for (const auto& o : q.options) {
            if (normalize_name(o) == normalize_name(kNoneOption)) {
                throw ValidationError("instance " + q.instance_id + " already has a None option");
            }
        }
        q.options.emplace_back(kNoneOption);
        if (train_only) q.provenance.none_train = true;
        else q.provenance.none_all = true;
        if (swap_to[i]) {
            const auto synonym = question_synonym(instances[i], table);
            q.question = replace_phrase(q.question, *synonym, *swap_to[i]);
            q.synonym = *swap_to[i];
            q.correct_index = q.options.size() - 1;
            ++result.summary.transformed;
        }
    }
    return result;
}

}  // namespace

ConfoundResult apply_none_all(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                              std::uint64_t rng_seed, const RoleSynonymTable& table) {
    return apply_none(instances, memes, rng_seed, table, false);
}

ConfoundResult apply_none_train(const std::vector<QAInstance>& instances,
                                const std::map<std::string, MemeRecord>& memes, std::uint64_t rng_seed,
                                const RoleSynonymTable& table) {
    return apply_none(instances, memes, rng_seed, table, true);
}

ConfoundResult apply_confound(ConfoundMode mode, const std::vector<QAInstance>& instances,
                              const std::map<std::string, MemeRecord>& memes, std::uint64_t rng_seed,
                              const RoleSynonymTable& table) {
    switch (mode) {
        case ConfoundMode::yesno: return apply_yesno(instances, memes, rng_seed, table);
        case ConfoundMode::none_all: return apply_none_all(instances, memes, rng_seed, table);
        case ConfoundMode::none_train: return apply_none_train(instances, memes, rng_seed, table);
    }
    throw ConfigError("unknown confound mode");
}

}  // namespace memeqa
