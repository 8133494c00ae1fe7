#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bame/backend.hpp"
#include "bame/demographics.hpp"

namespace bame {

enum class LabelSource { Agent, RuleBased };

std::string_view to_string(LabelSource source);

// What extraction pulled out of one story: the literal wording (when
// present) plus the resolved label. Absent fields stay absent; nothing is
// inferred.
struct RawExtraction {
    int story_index = 0;
    std::optional<std::string> gender_text;
    std::optional<std::string> origin_text;
    LabelSource source = LabelSource::RuleBased;
    DemographicLabel resolved;

    bool operator==(const RawExtraction&) const = default;
};

// Word -> gender lookup used by the rule patterns ("woman", "waiter",
// pronouns, ...). Ships with a built-in list; loadable from two text files
// (one token per line, '#' comments).
class GenderLexicon {
  public:
    static const GenderLexicon& builtin_default();
    static GenderLexicon from_documents(std::string_view female_doc, std::string_view male_doc);
    static std::string_view builtin_female_document();
    static std::string_view builtin_male_document();

    std::optional<Gender> lookup(std::string_view token) const;

  private:
    std::vector<std::pair<std::string, Gender>> tokens_;
};

// Verbatim agent prompts.
extern const char* const kExtractionAgentPrompt;
extern const char* const kDescriptorAgentPrompt;

// Deterministic fallback extractor. Ordered patterns:
//   (a) parenthetical label: Name (Descriptor gender)
//   (b) apposition: a/an <descriptors> <gender noun>
//   (c) first gender-lexicon word; first mapping-table match for origin.
// First match per field wins; absent fields stay unset and resolve to
// Unstated/Unclassified.
RawExtraction rule_based_extract(std::string_view story, int story_index, const MappingTable& table,
                                 const GenderLexicon& lexicon);

std::vector<RawExtraction> extract_labels_rule_based(std::span<const std::string> stories,
                                                     const MappingTable& table,
                                                     const GenderLexicon& lexicon);

struct ExtractionOutcome {
    std::vector<RawExtraction> extractions;
    bool used_fallback = false;     // any story labeled by the rule fallback
    std::string fallback_reason;    // first reason, for the record/logs
};

// Sends the stories to the extraction agent in one batch and parses its
// reply. Stories the reply skips (or a failed call entirely) fall back to
// rule_based_extract, flagged in the outcome.
ExtractionOutcome extract_labels(std::span<const std::string> stories, Backend& backend,
                                 const MappingTable& table, const GenderLexicon& lexicon);

enum class TermKind { Modifier, RoleVerb };

struct DescriptorTerm {
    std::string term;
    TermKind kind = TermKind::Modifier;
    bool operator==(const DescriptorTerm&) const = default;
};

struct DescriptorList {
    int story_index = 0;
    std::vector<DescriptorTerm> terms;  // lowercased, deduplicated, story order
};

// Offline approximation: suffix-matched adjectives plus -ed/-ing verb forms.
DescriptorList extract_descriptors_offline(std::string_view story, int story_index);
// Agent-backed variant; falls back to the offline path on backend errors.
DescriptorList extract_descriptors(std::string_view story, int story_index, Backend& backend);

// Agent-vs-rule cross-check rows for stories whose labels disagree.
struct Disagreement {
    std::string story_id;
    std::string agent_gender, rule_gender;
    std::string agent_origin, rule_origin;
};

std::vector<Disagreement> cross_check(std::span<const RawExtraction> agent,
                                      std::span<const RawExtraction> rule, std::string_view record_id);
// CSV: story_id, agent_gender, rule_gender, agent_origin, rule_origin.
std::string disagreement_csv(std::span<const Disagreement> rows);

}  // namespace bame
