#pragma once

#include "bame/backend.hpp"

namespace bame {

// Offline stand-in for a chat model. Two modes:
//  - replay: when the script's replay table is non-empty, every request is
//    answered by looking up the last user message (exact text or fnv1a-64
//    hex); a miss is a validation error.
//  - synthetic: recognizes the pipeline's request shapes (story generation,
//    distribution explanation, follow-up probe, label extraction,
//    descriptor extraction) and fabricates consistent replies.
//
// Responses are a pure function of (seed, request): same inputs, same
// bytes. Story batches allocate their gender x ethnicity cells by largest
// remainder over the configured weights, so batch composition is exact and
// the RNG only affects ordering, names, and phrasing.
class MockBackend : public Backend {
  public:
    MockBackend(std::string model, MockScript script, BackendLimits limits = {});

  protected:
    CompletionResponse do_complete(const CompletionRequest& request) override;

  private:
    MockScript script_;

    std::string replay_reply(const CompletionRequest& request) const;
    std::string synthetic_reply(const CompletionRequest& request) const;
    std::string generate_stories(const CompletionRequest& request, const std::string& last_user) const;
    std::string explanation_reply(const std::string& last_user, bool probed) const;
    std::string probe_reply(const std::string& last_user) const;
    std::string extraction_reply(const std::string& last_user) const;
    std::string descriptor_reply(const std::string& last_user) const;
};

}  // namespace bame
