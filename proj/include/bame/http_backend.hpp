#pragma once

#include "bame/backend.hpp"

namespace bame {

// Shared plumbing for the HTTP chat adapters: endpoint splitting, auth
// header from the configured environment variable, status-code to error
// mapping. Subclasses shape the request/response JSON.
class HttpChatBackend : public Backend {
  public:
    explicit HttpChatBackend(const BackendConfig& config);

  protected:
    BackendConfig config_;
    std::string base_url_;     // scheme://host[:port]
    std::string path_prefix_;  // any path baked into the endpoint

    // Returns the credential, or throws an auth error if the configured
    // environment variable is missing/empty.
    std::string credential() const;
    nlohmann::json post_json(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& headers,
                             const nlohmann::json& body) const;
};

// POST {endpoint}/v1/chat/completions, Bearer auth.
class OpenAiBackend final : public HttpChatBackend {
  public:
    explicit OpenAiBackend(const BackendConfig& config) : HttpChatBackend(config) {}

  protected:
    CompletionResponse do_complete(const CompletionRequest& request) override;
};

// POST {endpoint}/v1/messages, x-api-key auth, system turns lifted into the
// top-level system field.
class AnthropicBackend final : public HttpChatBackend {
  public:
    explicit AnthropicBackend(const BackendConfig& config) : HttpChatBackend(config) {}

  protected:
    CompletionResponse do_complete(const CompletionRequest& request) override;
};

}  // namespace bame
