#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace bame {

struct SamplingParams {
    double temperature = 0.7;
    std::optional<int> top_k = 50;
    double top_p = 0.9;
    std::optional<int> max_tokens;

    bool operator==(const SamplingParams&) const = default;
};

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);

struct ChatMessage {
    Role role = Role::User;
    std::string text;
    bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    SamplingParams params;
    std::string request_tag;  // opaque correlation id, echoed into logs

    // Requires at least one user message; all texts non-empty.
    void validate() const;
    const ChatMessage* last_user_message() const;
};

enum class FinishReason { Complete, Length, Other };

struct TokenUsage {
    int64_t prompt_tokens = 0;
    int64_t completion_tokens = 0;
};

struct CompletionResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Complete;
    std::optional<TokenUsage> usage;
    std::chrono::milliseconds latency{0};
};

enum class BackendErrorKind { Auth, RateLimit, Timeout, Transport, MalformedResponse, Validation };

std::string_view to_string(BackendErrorKind kind);
// Only transport-level trouble is worth retrying; content and auth
// failures repeat deterministically.
bool retryable(BackendErrorKind kind);

class BackendError : public std::runtime_error {
  public:
    BackendError(BackendErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    BackendErrorKind kind() const { return kind_; }

  private:
    BackendErrorKind kind_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_backoff{100};  // doubles per retry
};

// Simple blocking rate limiter (tokens per second, burst = capacity).
class TokenBucket {
  public:
    TokenBucket(double tokens_per_second, double capacity);
    void take();

  private:
    double rate_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mu_;
};

struct BackendLimits {
    int max_in_flight = 4;
    std::optional<double> requests_per_second;
    RetryPolicy retry;
};

// Base class: complete() validates, applies the concurrency cap, the
// optional rate limit, and the retry policy around do_complete().
class Backend {
  public:
    explicit Backend(std::string model, BackendLimits limits = {});
    virtual ~Backend() = default;

    CompletionResponse complete(const CompletionRequest& request);
    const std::string& model() const { return model_; }
    const BackendLimits& limits() const { return limits_; }

  protected:
    virtual CompletionResponse do_complete(const CompletionRequest& request) = 0;

  private:
    std::string model_;
    BackendLimits limits_;
    std::unique_ptr<TokenBucket> bucket_;

    // in-flight gate; plain semaphore over mutex+cv keeps the count runtime-set
    std::mutex gate_mu_;
    std::condition_variable gate_cv_;
    int in_flight_ = 0;
};

enum class BackendKind { Mock, OpenAiCompatible, AnthropicCompatible };

struct MockScript {
    uint64_t seed = 0;
    // replay table: fnv1a-64 hex of the last user message (or its exact
    // text) -> canned reply. When non-empty, every request must hit it.
    std::vector<std::pair<std::string, std::string>> replay;
    std::array<double, 2> gender_weights{0.5, 0.5};
    std::array<double, 4> ethnicity_weights{0.25, 0.25, 0.25, 0.25};
    std::optional<std::array<double, 2>> baseline_gender_weights;
    std::optional<std::array<double, 4>> baseline_ethnicity_weights;
    std::optional<std::array<double, 2>> bame_gender_weights;
    std::optional<std::array<double, 4>> bame_ethnicity_weights;
    bool superficial_explanation = false;
};

struct BackendConfig {
    BackendKind kind = BackendKind::Mock;
    std::string endpoint;   // base URL for HTTP backends
    std::string model = "mock-model";
    std::string auth_env;   // environment variable holding the credential
    SamplingParams params;
    BackendLimits limits;
    std::chrono::milliseconds http_timeout{30000};
    MockScript mock;
};

// Parses the backend section of a config document. Unknown "kind" or
// malformed fields raise ConfigError.
BackendConfig parse_backend_config(const nlohmann::json& doc);
std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace bame
