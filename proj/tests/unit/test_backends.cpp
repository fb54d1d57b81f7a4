#include <httplib.h>
#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "fixtures.hpp"
#include "memeqa/backends.hpp"
#include "memeqa/errors.hpp"
#include "memeqa/parallel.hpp"
#include "memeqa/text.hpp"

using namespace memeqa;
using nlohmann::json;

namespace {

BackendOptions opts(const std::string& id, BackendKind kind, std::shared_ptr<DiskCache> cache = nullptr) {
    BackendOptions o;
    o.id = id;
    o.kind = kind;
    o.cache = std::move(cache);
    o.backoff_ms = 1;
    return o;
}

// Minimal chat-completions server whose behavior is scripted per test.
class FakeServer {
public:
    explicit FakeServer(std::function<void(const httplib::Request&, httplib::Response&)> handler)
        : handler_(std::move(handler)) {
        server_.Post(".*", [this](const httplib::Request& req, httplib::Response& res) {
            ++calls;
            const int now = ++in_flight;
            int seen = max_in_flight.load();
            while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
            }
            {
                std::lock_guard lock(mutex);
                bodies.push_back(json::parse(req.body));
                auth.push_back(req.get_header_value("Authorization"));
            }
            handler_(req, res);
            --in_flight;
        });
        port = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }

    int port = 0;
    std::atomic<int> calls{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> max_in_flight{0};
    std::mutex mutex;
    std::vector<json> bodies;
    std::vector<std::string> auth;

private:
    std::function<void(const httplib::Request&, httplib::Response&)> handler_;
    httplib::Server server_;
    std::thread thread_;
};

void reply(httplib::Response& res, const std::string& text) {
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                         {"usage", {{"prompt_tokens", 3}, {"completion_tokens", 2}}}}
                        .dump(),
                    "application/json");
}

}  // namespace

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Base64, KnownVectors) {
    EXPECT_EQ(base64_encode(""), "");
    EXPECT_EQ(base64_encode("f"), "Zg==");
    EXPECT_EQ(base64_encode("fo"), "Zm8=");
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
}

TEST(DiskCache, RoundTripAndSharding) {
    const auto dir = fixtures::temp_dir("cache");
    DiskCache cache(dir);
    const std::string key = sha256_hex("k");
    EXPECT_FALSE(cache.get(key));
    cache.put(key, json{{"text", "v"}});
    EXPECT_EQ(cache.get(key)->at("text"), "v");
    EXPECT_TRUE(std::filesystem::exists(dir / key.substr(0, 2) / (key + ".json")));
}

TEST(CacheKey, SensitiveToEveryField) {
    auto b = make_mock_backend(opts("m", BackendKind::text_gen));
    BackendRequest r;
    r.prompt = "p";
    const auto base = b->cache_key(r);
    auto r2 = r;
    r2.prompt = "q";
    auto r3 = r;
    r3.params.temperature = 0.5;
    auto r4 = r;
    r4.params.stop = {"\n"};
    auto r5 = r;
    r5.system = "s";
    EXPECT_EQ(base, b->cache_key(r));
    for (const auto& other : {r2, r3, r4, r5}) EXPECT_NE(base, b->cache_key(other));
    auto other_backend = make_mock_backend(opts("n", BackendKind::text_gen));
    EXPECT_NE(base, other_backend->cache_key(r));
}

TEST(CacheKey, ImageBytesMatter) {
    const auto dir = fixtures::temp_dir("img");
    write_file_atomic(dir / "a.png", "AAAA");
    auto b = make_mock_backend(opts("m", BackendKind::mm_gen));
    BackendRequest r;
    r.kind = BackendKind::mm_gen;
    r.prompt = "p";
    r.image_ref = (dir / "a.png").string();
    const auto k1 = b->cache_key(r);
    write_file_atomic(dir / "a.png", "BBBB");
    EXPECT_NE(k1, b->cache_key(r));
}

TEST(MockBackend, ScriptedReplyAndCacheHit) {
    const auto dir = fixtures::temp_dir("mock-cache");
    MockScript script;
    script.rules.push_back(MockRule{{"slandered"}, {}, std::nullopt, std::nullopt, std::nullopt, "scripted"});
    auto b = make_mock_backend(opts("m", BackendKind::text_gen, std::make_shared<DiskCache>(dir)), script);
    BackendRequest r;
    r.prompt = "What is slandered in this meme?";
    const auto first = b->generate(r);
    const auto second = b->generate(r);
    EXPECT_EQ(first.text, "scripted");
    EXPECT_FALSE(first.from_cache);
    EXPECT_EQ(second.text, "scripted");
    EXPECT_TRUE(second.from_cache);
    EXPECT_EQ(b->stats().transport_calls, 1u);
    EXPECT_EQ(b->stats().cache_hits, 1u);
}

TEST(MockBackend, ErrorFallback) {
    MockScript script;
    script.fallback = "error";
    auto b = make_mock_backend(opts("m", BackendKind::text_gen), script);
    BackendRequest r;
    r.prompt = "unmatched";
    EXPECT_THROW(b->generate(r), BackendError);
}

TEST(MockBackend, ScriptFromJson) {
    const auto s = MockScript::from_json(json::parse(R"({"fallback":"error","rules":[
        {"starts_with":"How is","kind":"mm_gen","reply":"R"}]})"));
    ASSERT_EQ(s.rules.size(), 1u);
    EXPECT_EQ(s.rules[0].starts_with, "How is");
    EXPECT_EQ(s.rules[0].kind, BackendKind::mm_gen);
    EXPECT_THROW(MockScript::from_json(json{{"fallback", "maybe"}}), ConfigError);
}

TEST(Backend, KindPreconditions) {
    auto text = make_mock_backend(opts("t", BackendKind::text_gen));
    auto mm = make_mock_backend(opts("v", BackendKind::mm_gen));
    BackendRequest with_image;
    with_image.prompt = "p";
    with_image.image_ref = "x.png";
    EXPECT_THROW(text->generate(with_image), PreconditionError);
    BackendRequest mm_no_image;
    mm_no_image.kind = BackendKind::mm_gen;
    mm_no_image.prompt = "p";
    EXPECT_THROW(mm->generate(mm_no_image), PreconditionError);
    BackendRequest wrong_kind;
    wrong_kind.kind = BackendKind::mm_gen;
    wrong_kind.prompt = "p";
    wrong_kind.image_ref = "x.png";
    EXPECT_THROW(text->generate(wrong_kind), PreconditionError);
}

TEST(Embed, DeterministicFixedDimension) {
    auto e = make_mock_backend(opts("e", BackendKind::embed));
    const auto v = e->embed({"the cat sat", "the cat sat", ""});
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v[0], v[1]);
    EXPECT_TRUE(v[2].empty());
    ASSERT_EQ(v[0].size(), 3u);
    for (const auto& tok : v[0]) EXPECT_EQ(tok.size(), 32u);
    auto e2 = make_mock_backend(opts("e2", BackendKind::embed));
    EXPECT_EQ(e2->embed({"the cat sat"})[0], v[0]);
    EXPECT_EQ(mock_token_vector("cat", 8), mock_token_vector("cat", 8));
    EXPECT_NE(mock_token_vector("cat", 8), mock_token_vector("dog", 8));
}

TEST(Embed, EmptyListIsPrecondition) {
    auto e = make_mock_backend(opts("e", BackendKind::embed));
    EXPECT_THROW(e->embed({}), PreconditionError);
}

TEST(ChatWire, RequestShape) {
    BackendRequest r;
    r.kind = BackendKind::mm_gen;
    r.prompt = "Explain this meme in detail.";
    r.system = "sys";
    r.params.max_tokens = 64;
    r.params.stop = {"\n\n"};
    ImagePayload img{"data:image/png;base64,AAAA", "sha256:x", true};
    const auto body = build_chat_request(r, img, "llava");
    EXPECT_EQ(body["model"], "llava");
    EXPECT_EQ(body["max_tokens"], 64);
    EXPECT_EQ(body["stream"], false);
    EXPECT_EQ(body["stop"], json::array({"\n\n"}));
    ASSERT_EQ(body["messages"].size(), 2u);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    const auto& content = body["messages"][1]["content"];
    ASSERT_TRUE(content.is_array());
    EXPECT_EQ(content[0]["type"], "text");
    EXPECT_EQ(content[1]["type"], "image_url");
    EXPECT_EQ(content[1]["image_url"]["url"], "data:image/png;base64,AAAA");
}

TEST(ChatWire, ResponseParsing) {
    const auto r = parse_chat_response(json::parse(R"({"choices":[{"message":{"content":"hi"}}],
        "usage":{"prompt_tokens":5,"completion_tokens":1}})"));
    EXPECT_EQ(r.text, "hi");
    EXPECT_EQ(r.usage.prompt_tokens, 5);
    EXPECT_THROW(parse_chat_response(json::parse(R"({"nope":1})")), ProtocolError);
}

TEST(HttpBackend, RetriesServerErrorsThenSucceeds) {
    std::atomic<int> n{0};
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        if (n++ < 2) {
            res.status = 500;
            res.set_content("{}", "application/json");
        } else {
            reply(res, "recovered");
        }
    });
    auto o = opts("h", BackendKind::text_gen);
    o.max_retries = 3;
    auto b = make_http_backend(o, HttpBackendConfig{server.url(), "m", "secret"});
    BackendRequest r;
    r.prompt = "p";
    EXPECT_EQ(b->generate(r).text, "recovered");
    EXPECT_EQ(server.calls.load(), 3);
    EXPECT_EQ(b->stats().retries, 2u);
    EXPECT_EQ(server.auth.back(), "Bearer secret");
}

TEST(HttpBackend, GivesUpAfterMaxRetries) {
    FakeServer server([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    auto o = opts("h", BackendKind::text_gen);
    o.max_retries = 2;
    auto b = make_http_backend(o, HttpBackendConfig{server.url(), "m", ""});
    BackendRequest r;
    r.prompt = "p";
    try {
        b->generate(r);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.http_status(), 503);
    }
    EXPECT_EQ(server.calls.load(), 3);
}

TEST(HttpBackend, ClientErrorFailsFast) {
    FakeServer server([](const httplib::Request&, httplib::Response& res) {
        res.status = 400;
        res.set_content(R"({"error":"bad"})", "application/json");
    });
    auto b = make_http_backend(opts("h", BackendKind::text_gen), HttpBackendConfig{server.url(), "m", ""});
    BackendRequest r;
    r.prompt = "p";
    try {
        b->generate(r);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.http_status(), 400);
        EXPECT_FALSE(e.retryable());
    }
    EXPECT_EQ(server.calls.load(), 1);
}

TEST(HttpBackend, RateLimitedIsRetried) {
    std::atomic<int> n{0};
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        if (n++ == 0) res.status = 429;
        else reply(res, "ok");
    });
    auto b = make_http_backend(opts("h", BackendKind::text_gen), HttpBackendConfig{server.url(), "m", ""});
    BackendRequest r;
    r.prompt = "p";
    EXPECT_EQ(b->generate(r).text, "ok");
}

TEST(HttpBackend, TransportErrorRetriedThenRaised) {
    // Nothing listens on this port once the server is gone.
    int port = 0;
    {
        FakeServer s([](const httplib::Request&, httplib::Response& res) { reply(res, "x"); });
        port = s.port;
    }
    auto o = opts("h", BackendKind::text_gen);
    o.max_retries = 1;
    auto b = make_http_backend(o, HttpBackendConfig{"http://127.0.0.1:" + std::to_string(port), "m", ""});
    BackendRequest r;
    r.prompt = "p";
    EXPECT_THROW(b->generate(r), BackendError);
    EXPECT_EQ(b->stats().retries, 1u);
}

TEST(HttpBackend, FailedResponseNeverCached) {
    std::atomic<int> n{0};
    FakeServer server([&](const httplib::Request&, httplib::Response& res) {
        if (n++ == 0) res.status = 400;
        else reply(res, "good");
    });
    const auto dir = fixtures::temp_dir("http-cache");
    auto b = make_http_backend(opts("h", BackendKind::text_gen, std::make_shared<DiskCache>(dir)),
                               HttpBackendConfig{server.url(), "m", ""});
    BackendRequest r;
    r.prompt = "p";
    EXPECT_THROW(b->generate(r), BackendError);
    EXPECT_EQ(b->generate(r).text, "good");
    EXPECT_TRUE(b->generate(r).from_cache);
    EXPECT_EQ(server.calls.load(), 2);
}

TEST(HttpBackend, MultimodalSendsDataUrl) {
    FakeServer server([](const httplib::Request&, httplib::Response& res) { reply(res, "desc"); });
    const auto dir = fixtures::temp_dir("http-img");
    write_file_atomic(dir / "m.png", "\x89PNG");
    auto b = make_http_backend(opts("v", BackendKind::mm_gen), HttpBackendConfig{server.url(), "llava", ""});
    BackendRequest r;
    r.kind = BackendKind::mm_gen;
    r.prompt = "Explain this meme in detail.";
    r.image_ref = (dir / "m.png").string();
    EXPECT_EQ(b->generate(r).text, "desc");
    const auto url = server.bodies.back()["messages"].back()["content"][1]["image_url"]["url"].get<std::string>();
    EXPECT_EQ(url, "data:image/png;base64," + base64_encode("\x89PNG"));
    r.image_ref = (dir / "missing.png").string();
    EXPECT_THROW(b->generate(r), PreconditionError);
}

TEST(HttpBackend, InFlightBound) {
    FakeServer server([](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(30));
        reply(res, "x");
    });
    auto o = opts("h", BackendKind::text_gen);
    o.max_in_flight = 2;
    auto b = make_http_backend(o, HttpBackendConfig{server.url(), "m", ""});
    parallel_for(8, 8, [&](std::size_t i) {
        BackendRequest r;
        r.prompt = "p" + std::to_string(i);
        b->generate(r);
    });
    EXPECT_LE(server.max_in_flight.load(), 2);
    EXPECT_EQ(server.calls.load(), 8);
}

TEST(HttpBackend, Embeddings) {
    FakeServer server([](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        json data = json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i) data.push_back({{"embedding", {1.0, double(i)}}});
        res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    auto b = make_http_backend(opts("e", BackendKind::embed), HttpBackendConfig{server.url(), "bert", ""});
    const auto v = b->embed({"a b"});
    ASSERT_EQ(v[0].size(), 2u);
    EXPECT_EQ(v[0][1], (std::vector<double>{1.0, 1.0}));
}

TEST(HttpBackend, EmbeddingDimensionDriftIsProtocolError) {
    FakeServer server([](const httplib::Request& req, httplib::Response& res) {
        const auto body = json::parse(req.body);
        json data = json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i) {
            data.push_back({{"embedding", std::vector<double>(i + 1, 0.5)}});
        }
        res.set_content(json{{"data", data}}.dump(), "application/json");
    });
    auto b = make_http_backend(opts("e", BackendKind::embed), HttpBackendConfig{server.url(), "bert", ""});
    EXPECT_THROW(b->embed({"a b c"}), ProtocolError);
}

TEST(TokenBucket, LimitsRate) {
    TokenBucket bucket(20.0);
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 30; ++i) bucket.acquire();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // 20 burst tokens, then 10 more at 20/s.
    EXPECT_GE(s, 0.4);
}

TEST(BackendConfig, LoadsAndResolvesRoles) {
    const auto dir = fixtures::temp_dir("cfg");
    write_file_atomic(dir / "t.json", R"({"rules":[{"contains":["x"],"reply":"y"}]})");
    write_file_atomic(dir / "b.json", R"({"cache_dir":"cache","backends":[
        {"name":"v","kind":"mm_gen","provider":"mock"},
        {"name":"t","kind":"text_gen","provider":"mock","transcript":"t.json"},
        {"name":"h","kind":"text_gen","base_url":"http://127.0.0.1:1","model":"m","auth_env_var":"MEMEQA_TEST_KEY"}],
        "roles":{"generic":"v","answer":"t","summarizer":"t"}})");
    const auto set = load_backends(dir / "b.json");
    EXPECT_EQ(set.names(), (std::vector<std::string>{"h", "t", "v"}));
    EXPECT_EQ(set.roles.specific, "v");
    BackendRequest r;
    r.prompt = "x";
    EXPECT_EQ(set.get("t")->generate(r).text, "y");
    EXPECT_TRUE(std::filesystem::exists(dir / "cache"));
    EXPECT_THROW(set.get("nope"), ConfigError);
}

TEST(BackendConfig, UnknownRoleTarget) {
    const auto j = json::parse(R"({"backends":[{"name":"v","kind":"mm_gen","provider":"mock"}],
        "roles":{"generic":"ghost"}})");
    EXPECT_THROW(backends_from_json(j, "."), ConfigError);
}

TEST(BackendConfig, ShippedExamplesParse) {
    const auto root = fixtures::source_dir() / "data" / "examples";
    EXPECT_NO_THROW(load_backends(root / "backends.mock.json"));
    EXPECT_NO_THROW(load_backends(root / "backends.live.json"));
}
