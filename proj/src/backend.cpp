#include "bame/backend.hpp"

#include <array>
#include <thread>

#include "bame/demographics.hpp"  // ConfigError
#include "bame/http_backend.hpp"
#include "bame/mock_backend.hpp"

namespace bame {

std::string_view to_string(Role role) {
    switch (role) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

std::string_view to_string(BackendErrorKind kind) {
    switch (kind) {
        case BackendErrorKind::Auth: return "auth";
        case BackendErrorKind::RateLimit: return "rate_limit";
        case BackendErrorKind::Timeout: return "timeout";
        case BackendErrorKind::Transport: return "transport";
        case BackendErrorKind::MalformedResponse: return "malformed_response";
        case BackendErrorKind::Validation: return "validation";
    }
    return "transport";
}

bool retryable(BackendErrorKind kind) {
    switch (kind) {
        case BackendErrorKind::RateLimit:
        case BackendErrorKind::Timeout:
        case BackendErrorKind::Transport:
            return true;
        case BackendErrorKind::Auth:
        case BackendErrorKind::MalformedResponse:
        case BackendErrorKind::Validation:
            return false;
    }
    return false;
}

void CompletionRequest::validate() const {
    if (model.empty()) throw BackendError(BackendErrorKind::Validation, "request: empty model id");
    bool has_user = false;
    for (const ChatMessage& m : messages) {
        if (m.text.empty()) {
            throw BackendError(BackendErrorKind::Validation, "request: empty message text");
        }
        if (m.role == Role::User) has_user = true;
    }
    if (!has_user) {
        throw BackendError(BackendErrorKind::Validation, "request: needs at least one user message");
    }
}

const ChatMessage* CompletionRequest::last_user_message() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::User) return &*it;
    }
    return nullptr;
}

TokenBucket::TokenBucket(double tokens_per_second, double capacity)
    : rate_(tokens_per_second), capacity_(capacity), tokens_(capacity),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::take() {
    std::unique_lock lock(mu_);
    for (;;) {
        auto now = std::chrono::steady_clock::now();
        double elapsed = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        double wait_s = (1.0 - tokens_) / rate_;
        lock.unlock();
        std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
        lock.lock();
    }
}

Backend::Backend(std::string model, BackendLimits limits)
    : model_(std::move(model)), limits_(limits) {
    if (limits_.requests_per_second) {
        bucket_ = std::make_unique<TokenBucket>(*limits_.requests_per_second,
                                                std::max(1.0, *limits_.requests_per_second));
    }
}

CompletionResponse Backend::complete(const CompletionRequest& request) {
    request.validate();
    {
        std::unique_lock lock(gate_mu_);
        gate_cv_.wait(lock, [&] { return in_flight_ < limits_.max_in_flight; });
        ++in_flight_;
    }
    struct Release {
        Backend* b;
        ~Release() {
            {
                std::lock_guard lock(b->gate_mu_);
                --b->in_flight_;
            }
            b->gate_cv_.notify_one();
        }
    } release{this};

    int attempt = 0;
    for (;;) {
        if (bucket_) bucket_->take();
        auto start = std::chrono::steady_clock::now();
        try {
            CompletionResponse response = do_complete(request);
            response.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - start);
            return response;
        } catch (const BackendError& e) {
            ++attempt;
            if (!retryable(e.kind()) || attempt >= limits_.retry.max_attempts) throw;
            auto backoff = limits_.retry.base_backoff * (1 << (attempt - 1));
            if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
        }
    }
}

namespace {

template <size_t N>
std::array<double, N> parse_weights(const nlohmann::json& node, const std::vector<std::string>& keys,
                                    const char* what) {
    std::array<double, N> weights{};
    double sum = 0;
    for (size_t i = 0; i < N; ++i) {
        if (!node.contains(keys[i])) {
            throw ConfigError(std::string("mock config: ") + what + " missing key '" + keys[i] + "'");
        }
        weights[i] = node.at(keys[i]).get<double>();
        if (weights[i] < 0) {
            throw ConfigError(std::string("mock config: ") + what + " has negative weight");
        }
        sum += weights[i];
    }
    if (sum <= 0) throw ConfigError(std::string("mock config: ") + what + " weights sum to zero");
    for (double& w : weights) w /= sum;
    return weights;
}

const std::vector<std::string> kGenderKeys = {"female", "male"};
const std::vector<std::string> kEthnicityKeys = {"european", "african", "api", "hispanic_latino"};

MockScript parse_mock_script(const nlohmann::json& node) {
    MockScript script;
    if (node.contains("seed")) script.seed = node.at("seed").get<uint64_t>();
    if (node.contains("gender_weights")) {
        script.gender_weights = parse_weights<2>(node.at("gender_weights"), kGenderKeys, "gender_weights");
    }
    if (node.contains("ethnicity_weights")) {
        script.ethnicity_weights =
            parse_weights<4>(node.at("ethnicity_weights"), kEthnicityKeys, "ethnicity_weights");
    }
    if (node.contains("baseline_gender_weights")) {
        script.baseline_gender_weights =
            parse_weights<2>(node.at("baseline_gender_weights"), kGenderKeys, "baseline_gender_weights");
    }
    if (node.contains("baseline_ethnicity_weights")) {
        script.baseline_ethnicity_weights = parse_weights<4>(node.at("baseline_ethnicity_weights"),
                                                             kEthnicityKeys, "baseline_ethnicity_weights");
    }
    if (node.contains("bame_gender_weights")) {
        script.bame_gender_weights =
            parse_weights<2>(node.at("bame_gender_weights"), kGenderKeys, "bame_gender_weights");
    }
    if (node.contains("bame_ethnicity_weights")) {
        script.bame_ethnicity_weights =
            parse_weights<4>(node.at("bame_ethnicity_weights"), kEthnicityKeys, "bame_ethnicity_weights");
    }
    if (node.contains("superficial_explanation")) {
        script.superficial_explanation = node.at("superficial_explanation").get<bool>();
    }
    if (node.contains("replay")) {
        for (const auto& [key, value] : node.at("replay").items()) {
            script.replay.emplace_back(key, value.get<std::string>());
        }
    }
    return script;
}

}  // namespace

BackendConfig parse_backend_config(const nlohmann::json& doc) {
    BackendConfig config;
    std::string kind = doc.value("kind", "mock");
    if (kind == "mock") {
        config.kind = BackendKind::Mock;
    } else if (kind == "openai_compatible") {
        config.kind = BackendKind::OpenAiCompatible;
    } else if (kind == "anthropic_compatible") {
        config.kind = BackendKind::AnthropicCompatible;
    } else {
        throw ConfigError("backend config: unknown kind '" + kind + "'");
    }
    config.endpoint = doc.value("endpoint", "");
    config.model = doc.value("model", kind == "mock" ? "mock-model" : "");
    config.auth_env = doc.value("auth_env", "");
    if (config.kind != BackendKind::Mock) {
        if (config.endpoint.empty()) throw ConfigError("backend config: endpoint required for kind '" + kind + "'");
        if (config.model.empty()) throw ConfigError("backend config: model required for kind '" + kind + "'");
    }
    if (doc.contains("params")) {
        const nlohmann::json& p = doc.at("params");
        if (p.contains("temperature")) config.params.temperature = p.at("temperature").get<double>();
        if (p.contains("top_k")) {
            if (p.at("top_k").is_null()) config.params.top_k.reset();
            else config.params.top_k = p.at("top_k").get<int>();
        }
        if (p.contains("top_p")) config.params.top_p = p.at("top_p").get<double>();
        if (p.contains("max_tokens")) {
            if (p.at("max_tokens").is_null()) config.params.max_tokens.reset();
            else config.params.max_tokens = p.at("max_tokens").get<int>();
        }
    }
    if (!(config.params.temperature >= 0)) {
        throw ConfigError("backend config: temperature must be >= 0");
    }
    if (config.params.top_k && *config.params.top_k < 1) {
        throw ConfigError("backend config: top_k must be >= 1");
    }
    if (!(config.params.top_p > 0 && config.params.top_p <= 1)) {
        throw ConfigError("backend config: top_p must be in (0, 1]");
    }
    if (config.params.max_tokens && *config.params.max_tokens < 1) {
        throw ConfigError("backend config: max_tokens must be >= 1");
    }
    if (doc.contains("max_in_flight")) config.limits.max_in_flight = doc.at("max_in_flight").get<int>();
    if (config.limits.max_in_flight < 1) throw ConfigError("backend config: max_in_flight must be >= 1");
    if (doc.contains("requests_per_second") && !doc.at("requests_per_second").is_null()) {
        config.limits.requests_per_second = doc.at("requests_per_second").get<double>();
        if (*config.limits.requests_per_second <= 0) {
            throw ConfigError("backend config: requests_per_second must be > 0");
        }
    }
    if (doc.contains("retry")) {
        const nlohmann::json& r = doc.at("retry");
        if (r.contains("max_attempts")) config.limits.retry.max_attempts = r.at("max_attempts").get<int>();
        if (r.contains("backoff_ms")) {
            config.limits.retry.base_backoff = std::chrono::milliseconds(r.at("backoff_ms").get<int>());
        }
        if (config.limits.retry.max_attempts < 1) {
            throw ConfigError("backend config: retry.max_attempts must be >= 1");
        }
    }
    if (doc.contains("http_timeout_ms")) {
        config.http_timeout = std::chrono::milliseconds(doc.at("http_timeout_ms").get<int>());
    }
    if (doc.contains("mock")) config.mock = parse_mock_script(doc.at("mock"));
    return config;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
    switch (config.kind) {
        case BackendKind::Mock:
            return std::make_unique<MockBackend>(config.model, config.mock, config.limits);
        case BackendKind::OpenAiCompatible:
            return std::make_unique<OpenAiBackend>(config);
        case BackendKind::AnthropicCompatible:
            return std::make_unique<AnthropicBackend>(config);
    }
    throw ConfigError("backend config: unsupported kind");
}

}  // namespace bame
