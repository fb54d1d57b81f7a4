#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>

#include "memeqa/errors.hpp"
#include "memeqa/jsonl.hpp"
#include "memeqa/parallel.hpp"
#include "memeqa/pipeline.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

using nlohmann::json;

namespace {

// Latest parseable trace per instance. A torn final line from a crash is skipped.
std::map<std::string, json> read_existing(const std::filesystem::path& path) {
    std::map<std::string, json> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("instance_id") || !j["instance_id"].is_string()) {
            continue;
        }
        auto id = j["instance_id"].get<std::string>();
        out[std::move(id)] = std::move(j);
    }
    return out;
}

bool ends_mid_line(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) return false;
    const auto size = static_cast<std::streamoff>(in.tellg());
    if (size == 0) return false;
    in.seekg(size - 1);
    char c = 0;
    in.get(c);
    return c != '\n';
}

}  // namespace

RunSummary run_corpus(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes,
                      const Pipeline& pipeline, const std::filesystem::path& out_path, const RunOptions& options) {
    RunSummary summary;
    summary.total = instances.size();

    std::set<std::string> ids;
    for (const auto& q : instances) {
        if (!ids.insert(q.instance_id).second) throw ValidationError("duplicate instance_id " + q.instance_id);
        if (!memes.count(q.meme_id)) {
            throw ValidationError("instance " + q.instance_id + " references unknown meme " + q.meme_id);
        }
    }

    auto existing = read_existing(out_path);
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto it = existing.find(instances[i].instance_id);
        if (it != existing.end() && it->second.value("status", "") == "ok") {
            ++summary.resumed;
        } else {
            todo.push_back(i);
        }
    }

    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    const bool torn = ends_mid_line(out_path);
    std::ofstream out(out_path, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot open trace file for append: " + out_path.string());
    if (torn) out << '\n';

    std::mutex mutex;
    std::size_t done = 0;
    const std::size_t limit = options.stop_after.value_or(todo.size());
    const std::size_t n = std::min(limit, todo.size());

    parallel_for(n, options.parallelism, [&](std::size_t k) {
        const auto& q = instances[todo[k]];
        auto trace = pipeline.run(q, memes.at(q.meme_id));
        auto j = trace_to_json(trace, options.include_timing);
        std::lock_guard lock(mutex);
        out << jsonl::dump_line(j);
        out.flush();
        if (trace.ok()) ++summary.completed;
        else ++summary.failed;
        existing[q.instance_id] = std::move(j);
        ++done;
        if (options.progress) options.progress(summary.resumed + done, summary.total);
    });
    out.close();

    if (n < todo.size()) {
        summary.interrupted = true;
        return summary;
    }

    // Canonical rewrite: one trace per requested instance, sorted by id.
    std::string canonical;
    for (const auto& id : ids) {
        const auto& j = existing.at(id);
        if (j.contains("predicted_answer") && j["predicted_answer"].value("unparsed", false)) ++summary.unparsed;
        canonical += jsonl::dump_line(j);
    }
    write_file_atomic(out_path, canonical);
    return summary;
}

std::vector<PipelineTrace> load_traces(const std::filesystem::path& path) {
    std::vector<PipelineTrace> out;
    for (const auto& j : jsonl::read(path)) out.push_back(trace_from_json(j));
    return out;
}

}  // namespace memeqa
