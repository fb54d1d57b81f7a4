#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeqa/backends.hpp"
#include "memeqa/corpus.hpp"
#include "memeqa/pipeline.hpp"

namespace memeqa {

struct HttpResponse {
    int status = 200;
    nlohmann::json body;
};

struct ServiceOptions {
    std::filesystem::path store_dir;  // journals live here; empty keeps everything in memory
    std::string cors_origin = "*";
    bool include_timing = false;
};

struct Verdict {
    std::string instance_id;
    std::string verdict;  // agree | disagree
    std::string note;
    std::string recorded_at;
};

// JSON review API over a pipeline. State is rebuilt from append-only journals at
// construction, so instances, traces and verdicts survive a restart.
//
//   POST /instances        {meme: {image_ref, ocr_text, ...}, question, options, ...} -> 201 {instance, meme}
//   GET  /instances/{id}   -> {instance, meme}
//   GET  /corpus           -> {instances: [summary...]}
//   POST /run/{id}         -> trace, or 502 {error, trace} when a stage failed
//   GET  /trace/{id}       -> latest trace
//   POST /verdict/{id}     {verdict: agree|disagree, note} -> 201 verdict; 409 before any trace
//   GET  /verdict/{id}     -> latest verdict
class ReviewService {
public:
    ReviewService(const BackendSet& backends, PipelineOptions pipeline_options, ServiceOptions options);
    ~ReviewService();
    ReviewService(const ReviewService&) = delete;
    ReviewService& operator=(const ReviewService&) = delete;

    // Preloads a corpus (e.g. from `serve --corpus`). Existing ids are kept.
    void add_corpus(const std::vector<QAInstance>& instances, const std::map<std::string, MemeRecord>& memes);

    // Transport-free dispatch used by the HTTP layer and by tests.
    HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

    // Binds and serves on a background thread; returns the bound port (port 0 picks one).
    int start(const std::string& host, int port);
    // Blocks until the server thread exits.
    void wait();
    // Asks the server loop to exit without joining; usable from a signal handler.
    void shutdown();
    void stop();
    int bound_port() const { return bound_port_; }
    const std::map<std::string, std::string>& cors_headers() const { return cors_; }

private:
    struct Entry {
        QAInstance instance;
        MemeRecord meme;
    };
    struct Server;

    HttpResponse post_instance(const std::string& body);
    HttpResponse get_instance(const std::string& id);
    HttpResponse list_corpus();
    HttpResponse run(const std::string& id);
    HttpResponse get_trace(const std::string& id);
    HttpResponse post_verdict(const std::string& id, const std::string& body);
    HttpResponse get_verdict(const std::string& id);

    void replay();
    void append(const std::string& journal, const nlohmann::json& line);
    static nlohmann::json entry_json(const Entry& e);

    Pipeline pipeline_;
    ServiceOptions options_;
    std::map<std::string, std::string> cors_;

    mutable std::shared_mutex state_mutex_;
    std::mutex journal_mutex_;
    std::map<std::string, Entry> entries_;
    std::map<std::string, nlohmann::json> traces_;
    std::map<std::string, Verdict> verdicts_;

    std::unique_ptr<Server> server_;
    int bound_port_ = 0;
};

}  // namespace memeqa
