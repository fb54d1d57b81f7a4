#include <httplib.h>

#include "memeqa/backends.hpp"
#include "memeqa/errors.hpp"

namespace memeqa {

using nlohmann::json;

json build_chat_request(const BackendRequest& request, const ImagePayload& image, const std::string& model) {
    json messages = json::array();
    if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
    if (request.kind == BackendKind::mm_gen) {
        json content = json::array();
        content.push_back({{"type", "text"}, {"text", request.prompt}});
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image.url}}}});
        messages.push_back({{"role", "user"}, {"content", std::move(content)}});
    } else {
        messages.push_back({{"role", "user"}, {"content", request.prompt}});
    }
    json body{{"messages", std::move(messages)},
              {"max_tokens", request.params.max_tokens},
              {"temperature", request.params.temperature},
              {"stream", false}};
    if (!model.empty()) body["model"] = model;
    if (!request.params.stop.empty()) body["stop"] = request.params.stop;
    return body;
}

GenerateResult parse_chat_response(const json& body) {
    GenerateResult r;
    try {
        const auto& message = body.at("choices").at(0).at("message");
        const auto& content = message.at("content");
        if (content.is_string()) {
            r.text = content.get<std::string>();
        } else if (content.is_array()) {
            for (const auto& part : content) {
                if (part.value("type", "") == "text") r.text += part.value("text", "");
            }
        } else {
            throw ProtocolError("chat response content is neither string nor parts");
        }
        if (body.contains("usage")) {
            r.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0);
            r.usage.completion_tokens = body["usage"].value("completion_tokens", 0);
        }
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed chat response: ") + e.what());
    }
    return r;
}

namespace {

class HttpBackend final : public Backend {
public:
    HttpBackend(BackendOptions options, HttpBackendConfig config)
        : Backend(std::move(options)), config_(std::move(config)) {
        if (config_.base_url.empty()) throw ConfigError("backend " + id() + " needs a base_url");
    }

protected:
    GenerateResult transport_generate(const BackendRequest& request, const ImagePayload& image) override {
        if (request.kind == BackendKind::mm_gen && !image.resolved) {
            throw PreconditionError("image not found: " + request.image_ref.value_or(""));
        }
        const auto body = post(config_.chat_path, build_chat_request(request, image, config_.model));
        return parse_chat_response(body);
    }

    TokenVectors transport_embed(const std::vector<std::string>& tokens) override {
        json req{{"input", tokens}};
        if (!config_.model.empty()) req["model"] = config_.model;
        const auto body = post(config_.embed_path, req);
        TokenVectors out;
        try {
            for (const auto& item : body.at("data")) out.push_back(item.at("embedding").get<std::vector<double>>());
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("malformed embedding response: ") + e.what());
        }
        return out;
    }

private:
    json post(const std::string& path, const json& payload) {
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(10);
        client.set_read_timeout(config_.timeout_s);
        client.set_write_timeout(config_.timeout_s);
        httplib::Headers headers;
        if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

        auto res = client.Post(path, headers, payload.dump(), "application/json");
        if (!res) {
            throw BackendError("transport error talking to " + id() + ": " + httplib::to_string(res.error()), 0, true);
        }
        if (res->status == 429 || res->status >= 500) {
            throw BackendError("backend " + id() + " returned HTTP " + std::to_string(res->status), res->status, true);
        }
        if (res->status >= 400) {
            throw BackendError("backend " + id() + " rejected request with HTTP " + std::to_string(res->status) +
                                   ": " + res->body.substr(0, 200),
                               res->status, false);
        }
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw ProtocolError("backend " + id() + " returned non-JSON body: " + e.what());
        }
    }

    HttpBackendConfig config_;
};

}  // namespace

std::unique_ptr<Backend> make_http_backend(BackendOptions options, HttpBackendConfig config) {
    return std::make_unique<HttpBackend>(std::move(options), std::move(config));
}

}  // namespace memeqa
