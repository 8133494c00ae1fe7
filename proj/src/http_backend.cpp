#include "bame/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

namespace bame {
namespace {

BackendError status_error(int status, const std::string& body) {
    std::string detail = "HTTP " + std::to_string(status);
    if (!body.empty()) detail += ": " + body.substr(0, 200);
    if (status == 401 || status == 403) return {BackendErrorKind::Auth, detail};
    if (status == 408) return {BackendErrorKind::Timeout, detail};
    if (status == 429) return {BackendErrorKind::RateLimit, detail};
    if (status >= 500) return {BackendErrorKind::Transport, detail};
    return {BackendErrorKind::Validation, detail};
}

}  // namespace

HttpChatBackend::HttpChatBackend(const BackendConfig& config)
    : Backend(config.model, config.limits), config_(config) {
    const std::string& ep = config.endpoint;
    size_t scheme = ep.find("://");
    size_t path = scheme == std::string::npos ? ep.find('/') : ep.find('/', scheme + 3);
    if (path == std::string::npos) {
        base_url_ = ep;
    } else {
        base_url_ = ep.substr(0, path);
        path_prefix_ = ep.substr(path);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }
}

std::string HttpChatBackend::credential() const {
    if (config_.auth_env.empty()) return {};
    const char* value = std::getenv(config_.auth_env.c_str());
    if (value == nullptr || *value == '\0') {
        throw BackendError(BackendErrorKind::Auth,
                           "credential environment variable " + config_.auth_env + " is not set");
    }
    return value;
}

nlohmann::json HttpChatBackend::post_json(
    const std::string& path, const std::vector<std::pair<std::string, std::string>>& headers,
    const nlohmann::json& body) const {
    httplib::Client client(base_url_);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.http_timeout);
    auto rem = config_.http_timeout - secs;
    client.set_connection_timeout(secs.count(),
                                  std::chrono::duration_cast<std::chrono::microseconds>(rem).count());
    client.set_read_timeout(secs.count(),
                            std::chrono::duration_cast<std::chrono::microseconds>(rem).count());
    client.set_write_timeout(secs.count(),
                             std::chrono::duration_cast<std::chrono::microseconds>(rem).count());

    httplib::Headers hl;
    for (const auto& [k, v] : headers) hl.emplace(k, v);

    httplib::Result res = client.Post(path_prefix_ + path, hl, body.dump(), "application/json");
    if (!res) {
        BackendErrorKind kind = res.error() == httplib::Error::ConnectionTimeout
                                    ? BackendErrorKind::Timeout
                                    : BackendErrorKind::Transport;
        throw BackendError(kind, "request to " + base_url_ + path_prefix_ + path + " failed: " +
                                     httplib::to_string(res.error()));
    }
    if (res->status != 200) throw status_error(res->status, res->body);
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendErrorKind::MalformedResponse,
                           std::string("response is not valid JSON: ") + e.what());
    }
}

CompletionResponse OpenAiBackend::do_complete(const CompletionRequest& request) {
    nlohmann::json body;
    body["model"] = request.model;
    body["temperature"] = request.params.temperature;
    body["top_p"] = request.params.top_p;
    if (request.params.top_k) body["top_k"] = *request.params.top_k;
    if (request.params.max_tokens) body["max_tokens"] = *request.params.max_tokens;
    nlohmann::json messages = nlohmann::json::array();
    for (const ChatMessage& m : request.messages) {
        messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.text}});
    }
    body["messages"] = std::move(messages);

    std::vector<std::pair<std::string, std::string>> headers;
    std::string cred = credential();
    if (!cred.empty()) headers.emplace_back("Authorization", "Bearer " + cred);

    nlohmann::json reply = post_json("/v1/chat/completions", headers, body);

    CompletionResponse out;
    try {
        const nlohmann::json& choice = reply.at("choices").at(0);
        out.text = choice.at("message").at("content").get<std::string>();
        std::string reason = choice.value("finish_reason", "stop");
        out.finish_reason = reason == "stop"     ? FinishReason::Complete
                            : reason == "length" ? FinishReason::Length
                                                 : FinishReason::Other;
        if (reply.contains("usage")) {
            TokenUsage usage;
            usage.prompt_tokens = reply["usage"].value("prompt_tokens", int64_t{0});
            usage.completion_tokens = reply["usage"].value("completion_tokens", int64_t{0});
            out.usage = usage;
        }
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendErrorKind::MalformedResponse,
                           std::string("unexpected completion shape: ") + e.what());
    }
    return out;
}

CompletionResponse AnthropicBackend::do_complete(const CompletionRequest& request) {
    nlohmann::json body;
    body["model"] = request.model;
    body["max_tokens"] = request.params.max_tokens.value_or(1024);
    body["temperature"] = request.params.temperature;
    body["top_p"] = request.params.top_p;
    if (request.params.top_k) body["top_k"] = *request.params.top_k;

    std::string system_text;
    nlohmann::json messages = nlohmann::json::array();
    for (const ChatMessage& m : request.messages) {
        if (m.role == Role::System) {
            if (!system_text.empty()) system_text += "\n\n";
            system_text += m.text;
        } else {
            messages.push_back({{"role", std::string(to_string(m.role))}, {"content", m.text}});
        }
    }
    if (!system_text.empty()) body["system"] = system_text;
    body["messages"] = std::move(messages);

    std::vector<std::pair<std::string, std::string>> headers;
    headers.emplace_back("x-api-key", credential());
    headers.emplace_back("anthropic-version", "2023-06-01");

    nlohmann::json reply = post_json("/v1/messages", headers, body);

    CompletionResponse out;
    try {
        for (const nlohmann::json& block : reply.at("content")) {
            if (block.value("type", "text") == "text") out.text += block.at("text").get<std::string>();
        }
        std::string reason = reply.value("stop_reason", "end_turn");
        out.finish_reason = reason == "end_turn"     ? FinishReason::Complete
                            : reason == "max_tokens" ? FinishReason::Length
                                                     : FinishReason::Other;
        if (reply.contains("usage")) {
            TokenUsage usage;
            usage.prompt_tokens = reply["usage"].value("input_tokens", int64_t{0});
            usage.completion_tokens = reply["usage"].value("output_tokens", int64_t{0});
            out.usage = usage;
        }
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(BackendErrorKind::MalformedResponse,
                           std::string("unexpected completion shape: ") + e.what());
    }
    return out;
}

}  // namespace bame
