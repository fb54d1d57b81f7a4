#include "memeqa/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "memeqa/errors.hpp"
#include "memeqa/jsonl.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

using nlohmann::json;

const EntityRole* MemeRecord::find_entity(std::string_view entity_id) const {
    for (const auto& e : entities) {
        if (e.entity_id == entity_id) return &e;
    }
    return nullptr;
}

std::string_view split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ValidationError("unknown split: '" + std::string(name) + "'");
}

void to_json(json& j, const EntityRole& e) {
    j = json{{"entity_id", e.entity_id}, {"surface_name", e.surface_name}, {"role", role_name(e.role)}};
    if (e.is_person) j["is_person"] = true;
}

void from_json(const json& j, EntityRole& e) {
    j.at("entity_id").get_to(e.entity_id);
    j.at("surface_name").get_to(e.surface_name);
    e.role = parse_role(j.at("role").get<std::string>());
    e.is_person = j.value("is_person", false);
}

void to_json(json& j, const MemeRecord& r) {
    j = json{{"meme_id", r.meme_id},
             {"image_ref", r.image_ref},
             {"ocr_text", r.ocr_text},
             {"entities", r.entities},
             {"explanations", r.explanations}};
}

void from_json(const json& j, MemeRecord& r) {
    j.at("meme_id").get_to(r.meme_id);
    r.image_ref = j.value("image_ref", "");
    r.ocr_text = j.value("ocr_text", "");
    r.entities = j.value("entities", std::vector<EntityRole>{});
    r.explanations = j.value("explanations", std::map<std::string, std::string>{});
}

namespace {

json provenance_to_json(const Provenance& p) {
    json arr = json::array();
    if (p.original) arr.push_back("original");
    if (p.diversified) arr.push_back("diversified");
    if (p.yesno) arr.push_back("yesno");
    if (p.none_all) arr.push_back("none_all");
    if (p.none_train) arr.push_back("none_train");
    return arr;
}

Provenance provenance_from_json(const json& j) {
    Provenance p;
    for (const auto& flag : j) {
        const auto s = flag.get<std::string>();
        if (s == "original") p.original = true;
        else if (s == "diversified") p.diversified = true;
        else if (s == "yesno") p.yesno = true;
        else if (s == "none_all") p.none_all = true;
        else if (s == "none_train") p.none_train = true;
        else throw ValidationError("unknown provenance flag: " + s);
    }
    return p;
}

}  // namespace

void to_json(json& j, const QAInstance& q) {
    j = json{{"instance_id", q.instance_id},
             {"meme_id", q.meme_id},
             {"question", q.question},
             {"options", q.options},
             {"correct_index", q.correct_index},
             {"gold_explanation", q.gold_explanation},
             {"split", q.split ? json(split_name(*q.split)) : json(nullptr)},
             {"provenance", provenance_to_json(q.provenance)},
             {"entity_id", q.entity_id},
             {"role", role_name(q.role)},
             {"synonym", q.synonym}};
}

void from_json(const json& j, QAInstance& q) {
    j.at("instance_id").get_to(q.instance_id);
    j.at("meme_id").get_to(q.meme_id);
    j.at("question").get_to(q.question);
    j.at("options").get_to(q.options);
    j.at("correct_index").get_to(q.correct_index);
    q.gold_explanation = j.value("gold_explanation", "");
    const auto split_it = j.find("split");
    if (split_it != j.end() && !split_it->is_null()) {
        q.split = parse_split(split_it->get<std::string>());
    } else {
        q.split.reset();
    }
    q.provenance = provenance_from_json(j.value("provenance", json::array()));
    q.entity_id = j.value("entity_id", "");
    q.role = parse_role(j.value("role", "hero"));
    q.synonym = j.value("synonym", "");
}

void validate_record(const MemeRecord& record) {
    if (record.meme_id.empty()) throw ValidationError("record with empty meme_id");
    std::set<std::string> ids;
    for (const auto& e : record.entities) {
        if (e.entity_id.empty()) throw ValidationError("meme " + record.meme_id + ": entity with empty id");
        if (!ids.insert(e.entity_id).second) {
            throw ValidationError("meme " + record.meme_id + ": duplicate entity_id " + e.entity_id);
        }
    }
    for (const auto& [entity_id, _] : record.explanations) {
        if (!ids.count(entity_id)) {
            throw ValidationError("meme " + record.meme_id + ": explanation for unknown entity " + entity_id);
        }
    }
}

void validate_instance(const QAInstance& q) {
    if (q.options.empty() || q.correct_index >= q.options.size()) {
        throw ValidationError("instance " + q.instance_id + ": correct_index out of range");
    }
    std::set<std::string> seen;
    for (const auto& o : q.options) {
        if (!seen.insert(normalize_name(o)).second) {
            throw ValidationError("instance " + q.instance_id + ": duplicate option '" + o + "'");
        }
    }
}

std::vector<MemeRecord> load_records(const std::filesystem::path& path) {
    std::vector<MemeRecord> out;
    for (const auto& j : jsonl::read(path)) {
        auto record = j.get<MemeRecord>();
        validate_record(record);
        out.push_back(std::move(record));
    }
    return out;
}

std::vector<QAInstance> load_instances(const std::filesystem::path& path) {
    std::vector<QAInstance> out;
    for (const auto& j : jsonl::read(path)) {
        auto q = j.get<QAInstance>();
        validate_instance(q);
        out.push_back(std::move(q));
    }
    return out;
}

std::string instances_to_jsonl(const std::vector<QAInstance>& instances) { return jsonl::dump(instances); }

void save_instances(const std::filesystem::path& path, const std::vector<QAInstance>& instances) {
    write_file_atomic(path, instances_to_jsonl(instances));
}

std::map<std::string, MemeRecord> index_records(const std::vector<MemeRecord>& records) {
    std::map<std::string, MemeRecord> out;
    for (const auto& r : records) {
        if (!out.emplace(r.meme_id, r).second) throw ValidationError("duplicate meme_id: " + r.meme_id);
    }
    return out;
}

std::string make_question(std::string_view synonym, bool is_person) {
    std::string q = is_person ? "Who is " : "What is ";
    q += synonym;
    q += " in this meme?";
    return q;
}

std::string make_question(Role role, const RoleSynonymTable& table, std::size_t synonym_index, bool is_person) {
    const auto& list = table.synonyms(role);
    if (synonym_index >= list.size()) {
        throw ConfigError("synonym index " + std::to_string(synonym_index) + " out of range for role " +
                          std::string(role_name(role)));
    }
    return make_question(list[synonym_index], is_person);
}

namespace {

template <typename T>
void seeded_shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.index(i)]);
    }
}

}  // namespace

std::vector<std::string> sample_distractors(const MemeRecord& record, const EntityRole& answer, std::size_t k,
                                            const std::vector<EntityRole>& corpus_pool, std::uint64_t rng_seed,
                                            const std::string& instance_id) {
    if (k == 0) throw PreconditionError("distractor count must be at least 1");
    const auto* self = record.find_entity(answer.entity_id);
    if (self == nullptr) {
        throw PreconditionError("answer entity " + answer.entity_id + " not in meme " + record.meme_id);
    }

    std::unordered_set<std::string> excluded{normalize_name(answer.surface_name)};
    for (const auto& e : record.entities) {
        if (e.role == answer.role) excluded.insert(normalize_name(e.surface_name));
    }

    std::vector<const EntityRole*> local;
    std::unordered_set<std::string> local_keys;
    for (const auto& e : record.entities) {
        const auto key = normalize_name(e.surface_name);
        if (e.role == answer.role || excluded.count(key) || !local_keys.insert(key).second) continue;
        local.push_back(&e);
    }

    Rng rng(rng_seed);
    seeded_shuffle(local, rng);

    std::vector<std::string> chosen;
    std::unordered_set<std::string> chosen_keys;
    for (const auto* e : local) {
        if (chosen.size() == k) break;
        chosen.push_back(e->surface_name);
        chosen_keys.insert(normalize_name(e->surface_name));
    }
    if (chosen.size() == k) return chosen;

    auto usable = [&](const EntityRole& e) {
        const auto key = normalize_name(e.surface_name);
        return !excluded.count(key) && !chosen_keys.count(key);
    };

    // Rejection draws first; the pool is usually much larger than k.
    if (!corpus_pool.empty()) {
        const std::size_t attempts = 32 * k;
        for (std::size_t a = 0; a < attempts && chosen.size() < k; ++a) {
            const auto& e = corpus_pool[rng.index(corpus_pool.size())];
            if (!usable(e)) continue;
            chosen.push_back(e.surface_name);
            chosen_keys.insert(normalize_name(e.surface_name));
        }
    }
    if (chosen.size() < k) {
        std::vector<const EntityRole*> remaining;
        std::unordered_set<std::string> seen;
        for (const auto& e : corpus_pool) {
            if (usable(e) && seen.insert(normalize_name(e.surface_name)).second) remaining.push_back(&e);
        }
        const std::size_t needed = k - chosen.size();
        if (remaining.size() < needed) {
            throw CorpusTooSmall(instance_id.empty() ? record.meme_id + ":" + answer.entity_id : instance_id, k,
                                 chosen.size() + remaining.size());
        }
        seeded_shuffle(remaining, rng);
        for (std::size_t i = 0; i < needed; ++i) chosen.push_back(remaining[i]->surface_name);
    }
    return chosen;
}

std::vector<EntityRole> build_entity_pool(const std::vector<MemeRecord>& records) {
    std::map<std::string, EntityRole> by_key;
    for (const auto& r : records) {
        for (const auto& e : r.entities) by_key.emplace(normalize_name(e.surface_name), e);
    }
    std::vector<EntityRole> pool;
    pool.reserve(by_key.size());
    for (auto& [_, e] : by_key) pool.push_back(e);
    return pool;
}

BuildResult build_corpus(const std::vector<MemeRecord>& records, const CorpusConfig& config) {
    if (records.empty()) throw PreconditionError("build_corpus needs at least one record");
    if (config.num_options < 2) throw ConfigError("need at least 2 options per question");

    std::set<std::string> ids;
    for (const auto& r : records) {
        validate_record(r);
        if (!ids.insert(r.meme_id).second) throw ValidationError("duplicate meme_id: " + r.meme_id);
    }

    const auto pool = build_entity_pool(records);
    BuildResult result;

    for (const auto& record : records) {
        if (record.entities.empty()) {
            result.warnings.push_back("meme " + record.meme_id + " has no annotated entities; skipped");
            continue;
        }
        for (const auto& entity : record.entities) {
            const auto expl = record.explanations.find(entity.entity_id);
            if (expl == record.explanations.end()) continue;

            QAInstance q;
            q.instance_id = record.meme_id + ":" + entity.entity_id;
            q.meme_id = record.meme_id;
            q.entity_id = entity.entity_id;
            q.role = entity.role;
            q.gold_explanation = expl->second;
            q.provenance.original = true;

            Rng rng(derive_seed(config.seed, {record.meme_id, entity.entity_id}));
            const auto& synonyms = config.synonyms.synonyms(entity.role);
            q.synonym = synonyms[rng.index(synonyms.size())];
            q.question = make_question(q.synonym, entity.is_person);

            const std::uint64_t distractor_seed = rng.engine()();
            q.options = sample_distractors(record, entity, config.num_options - 1, pool, distractor_seed,
                                           q.instance_id);
            q.correct_index = rng.index(config.num_options);
            q.options.insert(q.options.begin() + static_cast<std::ptrdiff_t>(q.correct_index),
                             entity.surface_name);
            validate_instance(q);
            result.instances.push_back(std::move(q));
        }
    }

    std::sort(result.instances.begin(), result.instances.end(),
              [](const QAInstance& a, const QAInstance& b) { return a.instance_id < b.instance_id; });
    return result;
}

std::vector<QAInstance> split_corpus(std::vector<QAInstance> instances, const std::vector<double>& ratios,
                                     std::uint64_t rng_seed) {
    if (ratios.size() != 3) {
        throw ValidationError("split ratios need exactly 3 entries (train,val,test), got " +
                              std::to_string(ratios.size()));
    }
    double sum = 0.0;
    for (double r : ratios) {
        if (r < 0.0 || !std::isfinite(r)) throw ValidationError("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");

    struct Group {
        std::string meme_id;
        std::array<int, 3> roles{};
        int size = 0;
        std::uint64_t key = 0;
    };
    std::map<std::string, Group> groups;
    std::array<int, 3> role_totals{};
    for (const auto& q : instances) {
        auto& g = groups[q.meme_id];
        g.meme_id = q.meme_id;
        g.roles[static_cast<int>(q.role)] += 1;
        g.size += 1;
        role_totals[static_cast<int>(q.role)] += 1;
    }
    std::vector<Group> order;
    order.reserve(groups.size());
    for (auto& [id, g] : groups) {
        g.key = derive_seed(rng_seed, {id});
        order.push_back(g);
    }
    // Large groups first, seeded order within equal sizes; independent of input order.
    std::sort(order.begin(), order.end(), [](const Group& a, const Group& b) {
        if (a.size != b.size) return a.size > b.size;
        return a.key < b.key;
    });

    std::array<std::array<double, 3>, 3> target{};
    for (int s = 0; s < 3; ++s)
        for (int r = 0; r < 3; ++r) target[s][r] = ratios[s] * role_totals[r];
    std::array<std::array<int, 3>, 3> current{};

    std::map<std::string, Split> assignment;
    for (const auto& g : order) {
        int best = -1;
        double best_delta = 0.0;
        double best_deficit = 0.0;
        for (int s = 0; s < 3; ++s) {
            if (ratios[s] == 0.0) continue;
            double delta = 0.0;
            double deficit = 0.0;
            for (int r = 0; r < 3; ++r) {
                const double before = current[s][r] - target[s][r];
                const double after = before + g.roles[r];
                delta += after * after - before * before;
                deficit += target[s][r] - current[s][r];
            }
            if (best < 0 || delta < best_delta - 1e-12 ||
                (std::abs(delta - best_delta) <= 1e-12 && deficit > best_deficit)) {
                best = s;
                best_delta = delta;
                best_deficit = deficit;
            }
        }
        for (int r = 0; r < 3; ++r) current[best][r] += g.roles[r];
        assignment[g.meme_id] = static_cast<Split>(best);
    }

    // Local repair: single moves, then pairwise swaps, while they lower the cost. Cells
    // more than one instance off target are penalized heavily.
    auto cell_cost = [&](int s, int r, int value) {
        const double dev = value - target[s][r];
        const double over = std::max(0.0, std::abs(dev) - 1.0);
        return dev * dev + 1000.0 * over * over;
    };
    auto change = [&](const Group& g, int from, int to) {
        double d = 0.0;
        for (int r = 0; r < 3; ++r) {
            if (!g.roles[r]) continue;
            d += cell_cost(from, r, current[from][r] - g.roles[r]) - cell_cost(from, r, current[from][r]);
            d += cell_cost(to, r, current[to][r] + g.roles[r]) - cell_cost(to, r, current[to][r]);
        }
        return d;
    };
    auto apply_move = [&](const Group& g, int from, int to) {
        for (int r = 0; r < 3; ++r) {
            current[from][r] -= g.roles[r];
            current[to][r] += g.roles[r];
        }
        assignment[g.meme_id] = static_cast<Split>(to);
    };
    auto off_target = [&] {
        for (int s = 0; s < 3; ++s)
            for (int r = 0; r < 3; ++r)
                if (std::abs(current[s][r] - target[s][r]) > 1.0) return true;
        return false;
    };
    for (int round = 0; round < 64 && off_target(); ++round) {
        bool improved = false;
        for (const auto& g : order) {
            const int from = static_cast<int>(assignment[g.meme_id]);
            for (int to = 0; to < 3; ++to) {
                if (to == from || ratios[to] == 0.0) continue;
                if (change(g, from, to) < -1e-9) {
                    apply_move(g, from, to);
                    improved = true;
                    break;
                }
            }
        }
        if (!improved && order.size() <= 4000) {
            for (std::size_t a = 0; a < order.size() && !improved; ++a) {
                for (std::size_t b = a + 1; b < order.size() && !improved; ++b) {
                    const int sa = static_cast<int>(assignment[order[a].meme_id]);
                    const int sb = static_cast<int>(assignment[order[b].meme_id]);
                    if (sa == sb || order[a].roles == order[b].roles) continue;
                    const double before = [&] {
                        double c = 0.0;
                        for (int s : {sa, sb})
                            for (int r = 0; r < 3; ++r) c += cell_cost(s, r, current[s][r]);
                        return c;
                    }();
                    apply_move(order[a], sa, sb);
                    apply_move(order[b], sb, sa);
                    double after = 0.0;
                    for (int s : {sa, sb})
                        for (int r = 0; r < 3; ++r) after += cell_cost(s, r, current[s][r]);
                    if (after < before - 1e-9) {
                        improved = true;
                    } else {
                        apply_move(order[b], sa, sb);
                        apply_move(order[a], sb, sa);
                    }
                }
            }
        }
        if (!improved) break;
    }

    for (auto& q : instances) q.split = assignment.at(q.meme_id);
    return instances;
}

}  // namespace memeqa
