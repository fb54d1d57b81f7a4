#include "memeqa/backends.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "memeqa/errors.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

using nlohmann::json;

std::string_view backend_kind_name(BackendKind kind) {
    switch (kind) {
        case BackendKind::text_gen: return "text_gen";
        case BackendKind::mm_gen: return "mm_gen";
        case BackendKind::embed: return "embed";
    }
    return "text_gen";
}

BackendKind parse_backend_kind(std::string_view name) {
    if (name == "text_gen") return BackendKind::text_gen;
    if (name == "mm_gen") return BackendKind::mm_gen;
    if (name == "embed") return BackendKind::embed;
    throw ConfigError("unknown backend kind: '" + std::string(name) + "'");
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * SHA256_DIGEST_LENGTH);
    for (unsigned char c : digest) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 0xF]);
    }
    return out;
}

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

namespace {

std::string mime_for(const std::filesystem::path& path) {
    auto ext = to_lower(path.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    return "application/octet-stream";
}

bool is_remote_ref(std::string_view ref) {
    return ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 || ref.rfind("data:", 0) == 0;
}

}  // namespace

ImagePayload load_image(const std::string& image_ref) {
    ImagePayload p;
    if (is_remote_ref(image_ref)) {
        p.url = image_ref;
        p.fingerprint = "ref:" + image_ref;
        p.resolved = true;
        return p;
    }
    std::error_code ec;
    if (!image_ref.empty() && std::filesystem::is_regular_file(image_ref, ec)) {
        const auto bytes = read_file(image_ref);
        p.url = "data:" + mime_for(image_ref) + ";base64," + base64_encode(bytes);
        p.fingerprint = "sha256:" + sha256_hex(bytes);
        p.resolved = true;
        return p;
    }
    p.fingerprint = "ref:" + image_ref;
    return p;
}

DiskCache::DiskCache(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
}

std::filesystem::path DiskCache::path_for(const std::string& key) const {
    return root_ / key.substr(0, 2) / (key + ".json");
}

std::mutex& DiskCache::lock_for(const std::string& key) const {
    return locks_[fnv1a64(key) % locks_.size()];
}

std::optional<json> DiskCache::get(const std::string& key) const {
    std::lock_guard lock(lock_for(key));
    const auto path = path_for(key);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    try {
        return json::parse(in);
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

void DiskCache::put(const std::string& key, const json& value) {
    std::lock_guard lock(lock_for(key));
    write_file_atomic(path_for(key), value.dump(2));
}

TokenBucket::TokenBucket(double rate)
    : rate_(rate), capacity_(std::max(1.0, rate)), tokens_(capacity_), last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
    if (rate_ <= 0.0) return;
    while (true) {
        std::chrono::duration<double> wait{};
        {
            std::lock_guard lock(mutex_);
            const auto now = std::chrono::steady_clock::now();
            tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
            last_ = now;
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
        }
        std::this_thread::sleep_for(wait);
    }
}

Backend::Backend(BackendOptions options)
    : options_(std::move(options)),
      in_flight_(std::clamp(options_.max_in_flight, 1, 1024)),
      bucket_(options_.rate_limit) {
    if (options_.id.empty()) throw ConfigError("backend id must not be empty");
}

BackendStats Backend::stats() const {
    std::lock_guard lock(stats_mutex_);
    return stats_;
}

std::string Backend::cache_key(const BackendRequest& request) const {
    json j{{"backend", options_.id},
           {"kind", backend_kind_name(request.kind)},
           {"prompt", request.prompt},
           {"system", request.system ? json(*request.system) : json(nullptr)},
           {"image", request.image_ref ? json(load_image(*request.image_ref).fingerprint) : json(nullptr)},
           {"max_tokens", request.params.max_tokens},
           {"temperature", request.params.temperature},
           {"stop", request.params.stop}};
    return sha256_hex(j.dump());
}

template <typename Fn>
auto Backend::with_retries(Fn&& fn) -> decltype(fn()) {
    struct Permit {
        std::counting_semaphore<1024>& sem;
        explicit Permit(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
        ~Permit() { sem.release(); }
    } permit(in_flight_);

    for (int attempt = 0;; ++attempt) {
        bucket_.acquire();
        {
            std::lock_guard lock(stats_mutex_);
            ++stats_.transport_calls;
        }
        try {
            return fn();
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= options_.max_retries) throw;
        }
        {
            std::lock_guard lock(stats_mutex_);
            ++stats_.retries;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(options_.backoff_ms) * (1 << std::min(attempt, 10)));
    }
}

GenerateResult Backend::generate(const BackendRequest& request) {
    if (options_.kind == BackendKind::embed) {
        throw PreconditionError("backend " + options_.id + " is an embedding backend");
    }
    if (request.kind != options_.kind) {
        throw PreconditionError("backend " + options_.id + " serves " +
                                std::string(backend_kind_name(options_.kind)) + " requests, got " +
                                std::string(backend_kind_name(request.kind)));
    }
    if (request.kind == BackendKind::mm_gen && (!request.image_ref || request.image_ref->empty())) {
        throw PreconditionError("mm_gen request requires an image_ref");
    }
    if (request.kind == BackendKind::text_gen && request.image_ref) {
        throw PreconditionError("text_gen backend " + options_.id + " cannot take an image");
    }
    {
        std::lock_guard lock(stats_mutex_);
        ++stats_.requests;
    }

    const auto start = std::chrono::steady_clock::now();
    std::string key;
    if (options_.cache) {
        key = cache_key(request);
        if (auto hit = options_.cache->get(key)) {
            GenerateResult r;
            r.text = hit->at("text").get<std::string>();
            r.usage.prompt_tokens = hit->value("prompt_tokens", 0);
            r.usage.completion_tokens = hit->value("completion_tokens", 0);
            r.from_cache = true;
            r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            std::lock_guard lock(stats_mutex_);
            ++stats_.cache_hits;
            return r;
        }
    }

    const ImagePayload image = request.image_ref ? load_image(*request.image_ref) : ImagePayload{};
    auto result = with_retries([&] { return transport_generate(request, image); });
    result.from_cache = false;
    result.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    if (options_.cache) {
        // Only successful responses reach the cache.
        options_.cache->put(key, json{{"backend", options_.id},
                                      {"prompt", request.prompt},
                                      {"text", result.text},
                                      {"prompt_tokens", result.usage.prompt_tokens},
                                      {"completion_tokens", result.usage.completion_tokens}});
    }
    return result;
}

std::vector<TokenVectors> Backend::embed(const std::vector<std::string>& texts) {
    if (options_.kind != BackendKind::embed) {
        throw PreconditionError("backend " + options_.id + " is not an embedding backend");
    }
    if (texts.empty()) throw PreconditionError("embed needs at least one text");
    {
        std::lock_guard lock(stats_mutex_);
        ++stats_.requests;
    }

    std::vector<TokenVectors> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        const auto tokens = tokenize(text);
        if (tokens.empty()) {
            out.emplace_back();
            continue;
        }
        std::string key;
        TokenVectors vectors;
        bool hit = false;
        if (options_.cache) {
            key = sha256_hex(json{{"backend", options_.id}, {"kind", "embed"}, {"tokens", tokens}}.dump());
            if (auto cached = options_.cache->get(key)) {
                vectors = cached->at("vectors").get<TokenVectors>();
                hit = true;
                std::lock_guard lock(stats_mutex_);
                ++stats_.cache_hits;
            }
        }
        if (!hit) vectors = with_retries([&] { return transport_embed(tokens); });

        if (vectors.size() != tokens.size()) {
            throw ProtocolError("backend " + options_.id + " returned " + std::to_string(vectors.size()) +
                                " vectors for " + std::to_string(tokens.size()) + " tokens");
        }
        {
            std::lock_guard lock(stats_mutex_);
            for (const auto& v : vectors) {
                if (!dimension_) dimension_ = v.size();
                if (v.size() != *dimension_ || v.empty()) {
                    throw ProtocolError("embedding dimension drift on backend " + options_.id + ": expected " +
                                        std::to_string(*dimension_) + ", got " + std::to_string(v.size()));
                }
            }
        }
        if (options_.cache && !hit) options_.cache->put(key, json{{"tokens", tokens}, {"vectors", vectors}});
        out.push_back(std::move(vectors));
    }
    return out;
}

void BackendSet::add(std::shared_ptr<Backend> backend) {
    const auto name = backend->id();
    if (!backends_.emplace(name, std::move(backend)).second) throw ConfigError("duplicate backend name: " + name);
}

std::shared_ptr<Backend> BackendSet::get(const std::string& name) const {
    auto b = find(name);
    if (!b) throw ConfigError("no backend named '" + name + "' is configured");
    return b;
}

std::shared_ptr<Backend> BackendSet::find(const std::string& name) const {
    const auto it = backends_.find(name);
    return it == backends_.end() ? nullptr : it->second;
}

std::vector<std::string> BackendSet::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : backends_) out.push_back(name);
    return out;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

BackendSet backends_from_json(const json& config, const std::filesystem::path& base_dir) {
    BackendSet set;
    std::shared_ptr<DiskCache> cache;
    if (config.contains("cache_dir") && !config["cache_dir"].is_null()) {
        cache = std::make_shared<DiskCache>(resolve(base_dir, config["cache_dir"].get<std::string>()));
    }
    if (!config.contains("backends") || !config["backends"].is_array()) {
        throw ConfigError("backend config needs a 'backends' array");
    }
    for (const auto& b : config["backends"]) {
        BackendOptions opt;
        opt.id = b.at("name").get<std::string>();
        opt.kind = parse_backend_kind(b.at("kind").get<std::string>());
        opt.max_in_flight = b.value("max_in_flight", 4);
        opt.rate_limit = b.value("rate_limit", 0.0);
        opt.max_retries = b.value("max_retries", 3);
        opt.backoff_ms = b.value("backoff_ms", 200);
        if (b.value("cache", true)) opt.cache = cache;

        const auto provider = b.value("provider", std::string("openai"));
        if (provider == "mock") {
            MockScript script;
            if (b.contains("transcript")) {
                script = MockScript::from_json(json::parse(read_file(resolve(base_dir, b["transcript"]))));
            }
            if (b.contains("embedding_dim")) script.embedding_dim = b["embedding_dim"].get<std::size_t>();
            set.add(make_mock_backend(std::move(opt), std::move(script)));
        } else if (provider == "openai") {
            HttpBackendConfig http;
            http.base_url = b.at("base_url").get<std::string>();
            http.model = b.value("model", std::string());
            http.chat_path = b.value("chat_path", http.chat_path);
            http.embed_path = b.value("embed_path", http.embed_path);
            http.timeout_s = b.value("timeout_s", http.timeout_s);
            if (b.contains("auth_env_var")) {
                const auto var = b["auth_env_var"].get<std::string>();
                if (const char* v = std::getenv(var.c_str())) http.api_key = v;
            }
            set.add(make_http_backend(std::move(opt), std::move(http)));
        } else {
            throw ConfigError("unknown backend provider: " + provider);
        }
    }

    const auto roles = config.value("roles", json::object());
    auto role = [&](const char* name) -> std::string {
        const auto v = roles.value(name, std::string());
        if (!v.empty() && !set.find(v)) throw ConfigError(std::string("role '") + name + "' names unknown backend " + v);
        return v;
    };
    set.roles.generic = role("generic");
    set.roles.answer = role("answer");
    set.roles.specific = role("specific");
    set.roles.summarizer = role("summarizer");
    set.roles.diversifier = role("diversifier");
    set.roles.embedder = role("embedder");
    if (set.roles.specific.empty()) set.roles.specific = set.roles.generic;
    return set;
}

BackendSet load_backends(const std::filesystem::path& config_path) {
    json config;
    try {
        config = json::parse(read_file(config_path));
    } catch (const json::exception& e) {
        throw ConfigError(config_path.string() + ": " + e.what());
    }
    auto base = config_path.parent_path();
    if (base.empty()) base = ".";
    return backends_from_json(config, base);
}

BackendSet mock_backend_set(const std::optional<std::filesystem::path>& cache_dir, MockScript script) {
    std::shared_ptr<DiskCache> cache;
    if (cache_dir) cache = std::make_shared<DiskCache>(*cache_dir);
    auto make = [&](const char* name, BackendKind kind) {
        BackendOptions opt;
        opt.id = name;
        opt.kind = kind;
        opt.cache = cache;
        return std::shared_ptr<Backend>(make_mock_backend(std::move(opt), script));
    };
    BackendSet set;
    set.add(make("mock-mm", BackendKind::mm_gen));
    set.add(make("mock-answer", BackendKind::text_gen));
    set.add(make("mock-text", BackendKind::text_gen));
    set.add(make("mock-embed", BackendKind::embed));
    set.roles = BackendRoles{"mock-mm", "mock-answer", "mock-mm", "mock-text", "mock-text", "mock-embed"};
    return set;
}

}  // namespace memeqa
