#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace memeqa {

enum class Role { hero, villain, victim };

inline constexpr std::array<Role, 3> kAllRoles{Role::hero, Role::villain, Role::victim};

std::string_view role_name(Role role);
// Throws ConfigError on anything other than hero/villain/victim.
Role parse_role(std::string_view name);

struct SynonymMatch {
    Role role;
    std::string synonym;
    std::size_t offset;  // byte offset of the synonym inside the searched text
};

// Role label -> ordered synonym phrases used in question templates.
class RoleSynonymTable {
public:
    // hero: 4, villain: 7, victim: 4 phrases.
    static RoleSynonymTable defaults();
    static RoleSynonymTable from_json(const nlohmann::json& j);

    RoleSynonymTable() = default;

    const std::vector<std::string>& synonyms(Role role) const;
    std::optional<Role> role_of(std::string_view synonym) const;

    // Longest synonym occurring in `text` as a whole phrase.
    std::optional<SynonymMatch> find_in(std::string_view text) const;

    nlohmann::json to_json() const;

private:
    void validate() const;

    std::array<std::vector<std::string>, 3> table_;
};

// Deterministic generator used for every seeded draw in the toolkit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, n). n must be > 0.
    std::size_t index(std::size_t n);
    // Uniform on [0, 1).
    double unit();
    bool bernoulli(double p) { return unit() < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace memeqa
