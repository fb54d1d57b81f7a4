#include "memeqa/roles.hpp"

#include <cctype>
#include <algorithm>
#include <set>

#include "memeqa/errors.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

std::string_view role_name(Role role) {
    switch (role) {
        case Role::hero: return "hero";
        case Role::villain: return "villain";
        case Role::victim: return "victim";
    }
    return "unknown";
}

Role parse_role(std::string_view name) {
    const auto lowered = to_lower(name);
    if (lowered == "hero") return Role::hero;
    if (lowered == "villain") return Role::villain;
    if (lowered == "victim") return Role::victim;
    throw ConfigError("unknown role label: '" + std::string(name) + "'");
}

RoleSynonymTable RoleSynonymTable::defaults() {
    RoleSynonymTable t;
    t.table_[static_cast<int>(Role::hero)] = {"glorified", "praised", "lauded", "idealized"};
    t.table_[static_cast<int>(Role::villain)] = {"vilified",  "berated",    "slandered", "defamed",
                                                 "denounced", "disparaged", "maligned"};
    t.table_[static_cast<int>(Role::victim)] = {"victimised", "exploited", "taken advantage of",
                                                "scapegoated"};
    return t;
}

RoleSynonymTable RoleSynonymTable::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synonym table must be a JSON object");
    RoleSynonymTable t;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const Role role = parse_role(it.key());
        auto& dst = t.table_[static_cast<int>(role)];
        for (const auto& s : it.value()) dst.push_back(s.get<std::string>());
    }
    t.validate();
    return t;
}

void RoleSynonymTable::validate() const {
    std::set<std::string> seen;
    for (Role role : kAllRoles) {
        const auto& list = table_[static_cast<int>(role)];
        if (list.empty()) {
            throw ConfigError("synonym table has no phrases for role " + std::string(role_name(role)));
        }
        for (const auto& s : list) {
            const auto key = normalize_name(s);
            if (key.empty()) throw ConfigError("empty synonym phrase");
            if (!seen.insert(key).second) {
                throw ConfigError("synonym '" + s + "' maps to more than one role");
            }
        }
    }
}

const std::vector<std::string>& RoleSynonymTable::synonyms(Role role) const {
    return table_[static_cast<int>(role)];
}

std::optional<Role> RoleSynonymTable::role_of(std::string_view synonym) const {
    const auto key = normalize_name(synonym);
    for (Role role : kAllRoles) {
        for (const auto& s : synonyms(role)) {
            if (normalize_name(s) == key) return role;
        }
    }
    return std::nullopt;
}

namespace {

bool is_word_byte(char c) {
    const auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u >= 0x80;
}

}  // namespace

std::optional<SynonymMatch> RoleSynonymTable::find_in(std::string_view text) const {
    std::optional<SynonymMatch> best;
    for (Role role : kAllRoles) {
        for (const auto& s : synonyms(role)) {
            std::size_t pos = text.find(s);
            while (pos != std::string_view::npos) {
                const bool left_ok = pos == 0 || !is_word_byte(text[pos - 1]);
                const std::size_t end = pos + s.size();
                const bool right_ok = end >= text.size() || !is_word_byte(text[end]);
                if (left_ok && right_ok) {
                    if (!best || s.size() > best->synonym.size()) best = SynonymMatch{role, s, pos};
                    break;
                }
                pos = text.find(s, pos + 1);
            }
        }
    }
    return best;
}

nlohmann::json RoleSynonymTable::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (Role role : kAllRoles) j[std::string(role_name(role))] = synonyms(role);
    return j;
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

double Rng::unit() {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    return dist(engine_);
}

}  // namespace memeqa
