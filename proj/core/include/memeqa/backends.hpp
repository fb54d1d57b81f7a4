#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace memeqa {

enum class BackendKind { text_gen, mm_gen, embed };

std::string_view backend_kind_name(BackendKind kind);
BackendKind parse_backend_kind(std::string_view name);

struct GenerationParams {
    int max_tokens = 512;
    double temperature = 0.0;
    std::vector<std::string> stop;
};

struct BackendRequest {
    BackendKind kind = BackendKind::text_gen;
    std::string prompt;
    std::optional<std::string> system;  // sent as a leading system message
    std::optional<std::string> image_ref;
    GenerationParams params;
};

struct Usage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct GenerateResult {
    std::string text;
    Usage usage;
    double latency_ms = 0.0;
    bool from_cache = false;
};

// One vector per token of one text.
using TokenVectors = std::vector<std::vector<double>>;

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

struct ImagePayload {
    std::string url;          // data: URL for local files, pass-through for http(s)
    std::string fingerprint;  // content hash for local files, the reference otherwise
    bool resolved = false;    // false when a local path does not exist
};

ImagePayload load_image(const std::string& image_ref);

// Content-addressed store: one JSON file per key under <root>/<key[0:2]>/<key>.json.
class DiskCache {
public:
    explicit DiskCache(std::filesystem::path root);

    std::optional<nlohmann::json> get(const std::string& key) const;
    void put(const std::string& key, const nlohmann::json& value);
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path path_for(const std::string& key) const;
    std::mutex& lock_for(const std::string& key) const;

    std::filesystem::path root_;
    mutable std::array<std::mutex, 64> locks_;
};

// Refills `rate` tokens per second up to a burst of max(1, rate). rate <= 0 disables limiting.
class TokenBucket {
public:
    explicit TokenBucket(double rate);
    void acquire();

private:
    double rate_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

struct BackendOptions {
    std::string id;
    BackendKind kind = BackendKind::text_gen;
    int max_in_flight = 4;
    double rate_limit = 0.0;  // requests per second, 0 = unlimited
    int max_retries = 3;
    int backoff_ms = 200;
    std::shared_ptr<DiskCache> cache;
};

struct BackendStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t transport_calls = 0;
    std::size_t retries = 0;
};

// Client for one model service. Public calls validate the request, consult the
// cache, bound concurrency, rate-limit, and retry transient failures; derived
// classes only implement the transport. Safe for concurrent use.
class Backend {
public:
    explicit Backend(BackendOptions options);
    virtual ~Backend() = default;
    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    const std::string& id() const { return options_.id; }
    BackendKind kind() const { return options_.kind; }

    GenerateResult generate(const BackendRequest& request);
    // Tokenizes each text with the shared metric tokenizer and embeds every token.
    std::vector<TokenVectors> embed(const std::vector<std::string>& texts);

    std::string cache_key(const BackendRequest& request) const;
    BackendStats stats() const;

protected:
    virtual GenerateResult transport_generate(const BackendRequest& request, const ImagePayload& image) = 0;
    virtual TokenVectors transport_embed(const std::vector<std::string>& tokens) = 0;

private:
    template <typename Fn>
    auto with_retries(Fn&& fn) -> decltype(fn());

    BackendOptions options_;
    std::counting_semaphore<1024> in_flight_;
    TokenBucket bucket_;
    mutable std::mutex stats_mutex_;
    BackendStats stats_;
    std::optional<std::size_t> dimension_;
};

struct HttpBackendConfig {
    std::string base_url;  // scheme://host[:port]
    std::string model;
    std::string api_key;
    std::string chat_path = "/v1/chat/completions";
    std::string embed_path = "/v1/embeddings";
    int timeout_s = 120;
};

// Chat-completions-style JSON over HTTP; images travel as base64 data entries.
std::unique_ptr<Backend> make_http_backend(BackendOptions options, HttpBackendConfig config);

// Request body sent by the HTTP backend; exposed so the wire format is testable.
nlohmann::json build_chat_request(const BackendRequest& request, const ImagePayload& image,
                                  const std::string& model);
// Extracts the reply text and usage from a chat-completions response body.
GenerateResult parse_chat_response(const nlohmann::json& body);

// Scripted rules evaluated in order; the first match wins.
struct MockRule {
    std::vector<std::string> contains;
    std::vector<std::string> not_contains;
    std::optional<std::string> starts_with;
    std::optional<std::string> image_ref;
    std::optional<BackendKind> kind;
    std::string reply;
};

struct MockScript {
    std::vector<MockRule> rules;
    // "auto": built-in deterministic responder; "error": throw BackendError when no rule matches.
    std::string fallback = "auto";
    std::size_t embedding_dim = 32;

    static MockScript from_json(const nlohmann::json& j);
};

// Zero-network backend returning scripted or content-derived replies.
std::unique_ptr<Backend> make_mock_backend(BackendOptions options, MockScript script = {});

// The auto responder on its own, for tests and for documenting mock behavior.
std::string mock_auto_reply(const BackendRequest& request);
std::vector<double> mock_token_vector(const std::string& token, std::size_t dim);

// Logical backend slots used by the pipeline and tools.
struct BackendRoles {
    std::string generic;      // multimodal, generic rationale
    std::string answer;       // stage-1 answer model
    std::string specific;     // multimodal, answer-specific rationale
    std::string summarizer;   // text generation, explanation
    std::string diversifier;  // text generation, question rewriting
    std::string embedder;     // token embeddings for BERTScore
};

class BackendSet {
public:
    void add(std::shared_ptr<Backend> backend);
    std::shared_ptr<Backend> get(const std::string& name) const;  // throws ConfigError
    std::shared_ptr<Backend> find(const std::string& name) const;  // nullptr when absent
    std::vector<std::string> names() const;

    BackendRoles roles;

private:
    std::map<std::string, std::shared_ptr<Backend>> backends_;
};

// {"cache_dir": ..., "backends": [{name, kind, base_url, model, auth_env_var, max_in_flight, ...}],
//  "roles": {...}}. Relative paths resolve against the config file's directory.
BackendSet load_backends(const std::filesystem::path& config_path);
BackendSet backends_from_json(const nlohmann::json& config, const std::filesystem::path& base_dir);

// Mock-only set wiring every role, used by tests and the --mock CLI flag.
BackendSet mock_backend_set(const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                            MockScript script = {});

}  // namespace memeqa
