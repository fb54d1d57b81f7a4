#include "memeqa/service.hpp"

#include <httplib.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <regex>
#include <thread>

#include "memeqa/errors.hpp"
#include "memeqa/jsonl.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

using nlohmann::json;

struct ReviewService::Server {
    httplib::Server http;
    std::thread thread;
};

namespace {

HttpResponse error_response(int status, const std::string& message) {
    return {status, json{{"error", message}}};
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json verdict_json(const Verdict& v) {
    return {{"instance_id", v.instance_id}, {"verdict", v.verdict}, {"note", v.note}, {"recorded_at", v.recorded_at}};
}

Verdict verdict_from_json(const json& j) {
    return {j.at("instance_id").get<std::string>(), j.at("verdict").get<std::string>(), j.value("note", ""),
            j.value("recorded_at", "")};
}

}  // namespace

ReviewService::ReviewService(const BackendSet& backends, PipelineOptions pipeline_options, ServiceOptions options)
    : pipeline_(backends, std::move(pipeline_options)), options_(std::move(options)) {
    cors_ = {{"Access-Control-Allow-Origin", options_.cors_origin},
             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
             {"Access-Control-Allow-Headers", "Content-Type"}};
    if (!options_.store_dir.empty()) {
        std::filesystem::create_directories(options_.store_dir);
        replay();
    }
}

ReviewService::~ReviewService() { stop(); }

json ReviewService::entry_json(const Entry& e) { return {{"instance", e.instance}, {"meme", e.meme}}; }

void ReviewService::append(const std::string& journal, const json& line) {
    if (options_.store_dir.empty()) return;
    std::lock_guard lock(journal_mutex_);
    std::ofstream out(options_.store_dir / journal, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to journal " + journal);
    out << jsonl::dump_line(line);
}

void ReviewService::replay() {
    auto each = [&](const std::string& journal, auto&& fn) {
        std::ifstream in(options_.store_dir / journal);
        std::string line;
        while (std::getline(in, line)) {
            auto j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) continue;  // torn tail
            try {
                fn(j);
            } catch (const std::exception&) {
            }
        }
    };
    each("instances.jsonl", [&](const json& j) {
        Entry e{j.at("instance").get<QAInstance>(), j.at("meme").get<MemeRecord>()};
        entries_[e.instance.instance_id] = std::move(e);
    });
    each("traces.jsonl", [&](const json& j) { traces_[j.at("instance_id").get<std::string>()] = j; });
    each("verdicts.jsonl", [&](const json& j) {
        auto v = verdict_from_json(j);
        verdicts_[v.instance_id] = std::move(v);
    });
}

void ReviewService::add_corpus(const std::vector<QAInstance>& instances,
                               const std::map<std::string, MemeRecord>& memes) {
    std::unique_lock lock(state_mutex_);
    for (const auto& q : instances) {
        const auto m = memes.find(q.meme_id);
        if (m == memes.end()) throw ValidationError("instance " + q.instance_id + " references unknown meme");
        entries_.try_emplace(q.instance_id, Entry{q, m->second});
    }
}

HttpResponse ReviewService::handle(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex with_id(R"(^/(instances|run|trace|verdict)/([^/]+)$)");
    try {
        if (method == "OPTIONS") return {204, nullptr};
        if (path == "/instances" && method == "POST") return post_instance(body);
        if (path == "/corpus" && method == "GET") return list_corpus();
        std::smatch m;
        if (std::regex_match(path, m, with_id)) {
            const auto route = m[1].str();
            const auto id = m[2].str();
            if (route == "instances" && method == "GET") return get_instance(id);
            if (route == "run" && method == "POST") return run(id);
            if (route == "trace" && method == "GET") return get_trace(id);
            if (route == "verdict" && method == "POST") return post_verdict(id, body);
            if (route == "verdict" && method == "GET") return get_verdict(id);
            return error_response(405, "method not allowed");
        }
        if (path == "/instances" || path == "/corpus") return error_response(405, "method not allowed");
        return error_response(404, "no route for " + path);
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

HttpResponse ReviewService::post_instance(const std::string& body) {
    const auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return error_response(400, "body must be a JSON object");

    Entry e;
    try {
        const auto& meme = j.at("meme");
        if (!meme.is_object()) return error_response(400, "meme must be an object");
        e.meme.image_ref = meme.value("image_ref", "");
        e.meme.ocr_text = meme.value("ocr_text", "");
        if (meme.contains("entities")) e.meme.entities = meme["entities"].get<std::vector<EntityRole>>();
        e.meme.meme_id = meme.value("meme_id", "");
        if (e.meme.meme_id.empty()) {
            e.meme.meme_id = "m-" + sha256_hex(e.meme.image_ref + '\0' + e.meme.ocr_text).substr(0, 12);
        }

        e.instance.question = j.at("question").get<std::string>();
        e.instance.options = j.at("options").get<std::vector<std::string>>();
        e.instance.correct_index = j.value("correct_index", std::size_t{0});
        e.instance.gold_explanation = j.value("gold_explanation", "");
        e.instance.meme_id = e.meme.meme_id;
        e.instance.provenance.original = true;
    } catch (const json::exception& ex) {
        return error_response(400, std::string("schema violation: ") + ex.what());
    } catch (const Error& ex) {
        return error_response(400, ex.what());
    }
    if (trim(e.instance.question).empty()) return error_response(400, "question must be non-empty");
    if (e.instance.options.size() < 2) return error_response(400, "at least two options are required");

    const json content{{"meme", e.meme}, {"question", e.instance.question}, {"options", e.instance.options}};
    e.instance.instance_id = j.value("instance_id", "u-" + sha256_hex(content.dump()).substr(0, 16));
    try {
        validate_record(e.meme);
        validate_instance(e.instance);
    } catch (const ValidationError& ex) {
        return error_response(400, ex.what());
    }

    std::unique_lock lock(state_mutex_);
    const auto it = entries_.find(e.instance.instance_id);
    if (it != entries_.end()) return {200, entry_json(it->second)};
    auto out = entry_json(e);
    append("instances.jsonl", out);
    entries_[e.instance.instance_id] = std::move(e);
    return {201, out};
}

HttpResponse ReviewService::get_instance(const std::string& id) {
    std::shared_lock lock(state_mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) return error_response(404, "unknown instance " + id);
    return {200, entry_json(it->second)};
}

HttpResponse ReviewService::list_corpus() {
    std::shared_lock lock(state_mutex_);
    json list = json::array();
    for (const auto& [id, e] : entries_) {
        const auto v = verdicts_.find(id);
        list.push_back({{"instance_id", id},
                        {"meme_id", e.meme.meme_id},
                        {"image_ref", e.meme.image_ref},
                        {"question", e.instance.question},
                        {"options", e.instance.options},
                        {"has_trace", traces_.count(id) > 0},
                        {"verdict", v == verdicts_.end() ? json(nullptr) : json(v->second.verdict)}});
    }
    return {200, json{{"instances", list}}};
}

HttpResponse ReviewService::run(const std::string& id) {
    Entry e;
    {
        std::shared_lock lock(state_mutex_);
        const auto it = entries_.find(id);
        if (it == entries_.end()) return error_response(404, "unknown instance " + id);
        e = it->second;
    }
    const auto trace = pipeline_.run(e.instance, e.meme);
    auto j = trace_to_json(trace, options_.include_timing);
    {
        std::unique_lock lock(state_mutex_);
        append("traces.jsonl", j);
        traces_[id] = j;
    }
    if (!trace.ok()) {
        return {502, json{{"error", trace.errors.empty() ? "backend failure" : trace.errors.back()}, {"trace", j}}};
    }
    return {200, j};
}

HttpResponse ReviewService::get_trace(const std::string& id) {
    std::shared_lock lock(state_mutex_);
    if (!entries_.count(id)) return error_response(404, "unknown instance " + id);
    const auto it = traces_.find(id);
    if (it == traces_.end()) return error_response(404, "no trace for " + id);
    return {200, it->second};
}

HttpResponse ReviewService::post_verdict(const std::string& id, const std::string& body) {
    const auto j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return error_response(400, "body must be a JSON object");
    if (!j.contains("verdict") || !j["verdict"].is_string()) return error_response(400, "verdict is required");
    if (j.contains("note") && !j["note"].is_string()) return error_response(400, "note must be a string");

    Verdict v{id, j["verdict"].get<std::string>(), j.value("note", ""), utc_now()};
    if (v.verdict != "agree" && v.verdict != "disagree") return error_response(400, "verdict must be agree or disagree");
    if (v.verdict == "disagree" && trim(v.note).empty()) return error_response(400, "disagree needs a note");

    std::unique_lock lock(state_mutex_);
    if (!entries_.count(id)) return error_response(404, "unknown instance " + id);
    if (!traces_.count(id)) return error_response(409, "run the instance before recording a verdict");
    const auto out = verdict_json(v);
    append("verdicts.jsonl", out);
    verdicts_[id] = std::move(v);
    return {201, out};
}

HttpResponse ReviewService::get_verdict(const std::string& id) {
    std::shared_lock lock(state_mutex_);
    if (!entries_.count(id)) return error_response(404, "unknown instance " + id);
    const auto it = verdicts_.find(id);
    if (it == verdicts_.end()) return error_response(404, "no verdict for " + id);
    return {200, verdict_json(it->second)};
}

namespace {

void install_routes(httplib::Server& http, ReviewService& svc) {
    auto dispatch = [&svc](const char* method) {
        return [&svc, method](const httplib::Request& req, httplib::Response& res) {
            const auto r = svc.handle(method, req.path, req.body);
            res.status = r.status;
            for (const auto& [k, v] : svc.cors_headers()) res.set_header(k, v);
            if (r.status != 204) res.set_content(r.body.dump(), "application/json");
        };
    };
    http.Get(".*", dispatch("GET"));
    http.Post(".*", dispatch("POST"));
    http.Options(".*", dispatch("OPTIONS"));
}

}  // namespace

int ReviewService::start(const std::string& host, int port) {
    stop();
    server_ = std::make_unique<Server>();
    install_routes(server_->http, *this);
    bound_port_ = port == 0 ? server_->http.bind_to_any_port(host)
                            : (server_->http.bind_to_port(host, port) ? port : -1);
    if (bound_port_ <= 0) {
        server_.reset();
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
    server_->http.wait_until_ready();
    return bound_port_;
}

void ReviewService::wait() {
    if (server_ && server_->thread.joinable()) server_->thread.join();
}

void ReviewService::shutdown() {
    if (server_) server_->http.stop();
}

void ReviewService::stop() {
    if (!server_) return;
    server_->http.stop();
    if (server_->thread.joinable()) server_->thread.join();
    server_.reset();
}

}  // namespace memeqa
