#include <cmath>
#include <cstdio>
#include <regex>

#include "memeqa/backends.hpp"
#include "memeqa/errors.hpp"
#include "memeqa/roles.hpp"
#include "memeqa/text.hpp"

namespace memeqa {

using nlohmann::json;

namespace {

std::vector<std::string> string_list(const json& j) {
    if (j.is_string()) return {j.get<std::string>()};
    return j.get<std::vector<std::string>>();
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

std::string hex8(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf, 8);
}

std::string line_after(const std::string& text, const std::string& label) {
    const auto pos = text.find(label);
    if (pos == std::string::npos) return {};
    const auto start = pos + label.size();
    const auto end = text.find('\n', start);
    return trim(text.substr(start, end == std::string::npos ? std::string::npos : end - start));
}

std::string first_sentence(const std::string& text) {
    const auto t = trim(text);
    const auto dot = t.find(". ");
    if (dot == std::string::npos) return t;
    return t.substr(0, dot + 1);
}

std::string rewrite_list(const std::string& question) {
    std::string core = question;
    for (const char* lead : {"Who is ", "What is "}) {
        if (starts_with(core, lead)) {
            core = core.substr(std::string_view(lead).size());
            break;
        }
    }
    while (!core.empty() && (core.back() == '?' || core.back() == ' ')) core.pop_back();
    return "1. Which entity is " + core + "?\n"
           "2. Who or what is " + core + "?\n"
           "3. In your reading, what is " + core + "?\n"
           "4. Identify the entity that is " + core + ".\n"
           "5. Can you tell which entity is " + core + "?";
}

}  // namespace

std::string mock_auto_reply(const BackendRequest& request) {
    const auto& p = request.prompt;
    if (p.find("Explain this meme in detail.") != std::string::npos) {
        const auto ref = request.image_ref.value_or("");
        return "This meme (" + hex8(fnv1a64(ref)) +
               ") pairs its image with a pointed caption to cast the people and groups it shows in a "
               "deliberate light. It relies on exaggeration and contrast to make its claim.";
    }
    if (starts_with(p, "How is ")) {
        auto rest = p.substr(7);
        while (!rest.empty() && (rest.back() == '?' || rest.back() == ' ')) rest.pop_back();
        return "The meme shows how " + rest + " by singling this entity out in its caption and imagery. "
               "The framing leans on exaggeration and visual contrast to steer the audience.";
    }
    if (starts_with(p, "Summarize the explanation for")) {
        const auto marker = p.find("Explanation:");
        if (marker == std::string::npos) return {};
        return first_sentence(p.substr(marker + 12));
    }
    if (p.find("different ways") != std::string::npos || p.find("Rewrite") != std::string::npos) {
        auto q = line_after(p, "Question:");
        if (q.empty()) q = trim(p);
        return rewrite_list(q);
    }
    if (p.find("Options:") != std::string::npos) {
        static const std::regex letter(R"(\(([a-z]{1,2})\) )");
        const auto options = line_after(p, "Options:");
        const auto n = static_cast<std::size_t>(
            std::distance(std::sregex_iterator(options.begin(), options.end(), letter), std::sregex_iterator()));
        const bool second_step = p.find("\nSolution:") != std::string::npos;
        if (second_step && n > 0) {
            const auto idx = fnv1a64(p) % n;
            const char a = static_cast<char>('a' + std::min<std::size_t>(idx, 25));
            return std::string("The answer is (") + a + ")";
        }
        const auto lecture = request.system.value_or("The meme frames its entities through caption and imagery.");
        return "Solution: " + lecture + " [SEP] The caption singles out one of the listed options.";
    }
    return "mock reply " + hex8(fnv1a64(p));
}

std::vector<double> mock_token_vector(const std::string& token, std::size_t dim) {
    Rng rng(fnv1a64(token));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = normal(rng.engine());
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

MockScript MockScript::from_json(const json& j) {
    MockScript s;
    s.fallback = j.value("fallback", std::string("auto"));
    s.embedding_dim = j.value("embedding_dim", std::size_t{32});
    for (const auto& r : j.value("rules", json::array())) {
        MockRule rule;
        if (r.contains("contains")) rule.contains = string_list(r["contains"]);
        if (r.contains("not_contains")) rule.not_contains = string_list(r["not_contains"]);
        if (r.contains("starts_with")) rule.starts_with = r["starts_with"].get<std::string>();
        if (r.contains("image_ref")) rule.image_ref = r["image_ref"].get<std::string>();
        if (r.contains("kind")) rule.kind = parse_backend_kind(r["kind"].get<std::string>());
        rule.reply = r.at("reply").get<std::string>();
        s.rules.push_back(std::move(rule));
    }
    if (s.fallback != "auto" && s.fallback != "error") throw ConfigError("mock fallback must be 'auto' or 'error'");
    return s;
}

namespace {

class MockBackend final : public Backend {
public:
    MockBackend(BackendOptions options, MockScript script) : Backend(std::move(options)), script_(std::move(script)) {}

protected:
    GenerateResult transport_generate(const BackendRequest& request, const ImagePayload&) override {
        GenerateResult r;
        r.text = reply_for(request);
        r.usage.prompt_tokens = static_cast<int>(split_whitespace(request.prompt).size());
        r.usage.completion_tokens = static_cast<int>(split_whitespace(r.text).size());
        return r;
    }

    TokenVectors transport_embed(const std::vector<std::string>& tokens) override {
        TokenVectors out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(mock_token_vector(t, script_.embedding_dim));
        return out;
    }

private:
    std::string reply_for(const BackendRequest& request) const {
        for (const auto& rule : script_.rules) {
            if (rule.kind && *rule.kind != request.kind) continue;
            if (rule.image_ref && request.image_ref != rule.image_ref) continue;
            if (rule.starts_with && !starts_with(request.prompt, *rule.starts_with)) continue;
            bool ok = true;
            for (const auto& c : rule.contains) ok = ok && request.prompt.find(c) != std::string::npos;
            for (const auto& c : rule.not_contains) ok = ok && request.prompt.find(c) == std::string::npos;
            if (ok) return rule.reply;
        }
        if (script_.fallback == "error") {
            throw BackendError("mock backend " + id() + " has no rule for prompt: " + request.prompt.substr(0, 80));
        }
        return mock_auto_reply(request);
    }

    MockScript script_;
};

}  // namespace

std::unique_ptr<Backend> make_mock_backend(BackendOptions options, MockScript script) {
    return std::make_unique<MockBackend>(std::move(options), std::move(script));
}

}  // namespace memeqa
