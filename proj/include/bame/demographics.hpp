#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bame/text_util.hpp"

namespace bame {

// Thrown for malformed data files and config documents.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class Gender { Female, Male, Unstated };

enum class EthnicityCategory { European, African, Api, HispanicLatino, Unclassified };

std::string_view to_string(Gender g);
std::string_view to_string(EthnicityCategory e);
Gender gender_from_string(std::string_view s);
EthnicityCategory ethnicity_from_string(std::string_view s);

// One story character's resolved demographics. origin_text keeps the raw
// wording the story used ("Korean-American", "White", ...); ethnicity is the
// category it maps to. Unstated/Unclassified mark missing or unmappable data.
struct DemographicLabel {
    Gender gender = Gender::Unstated;
    std::string origin_text;
    EthnicityCategory ethnicity = EthnicityCategory::Unclassified;

    bool classified() const {
        return gender != Gender::Unstated && ethnicity != EthnicityCategory::Unclassified;
    }
    bool operator==(const DemographicLabel&) const = default;
};

struct MappingEntry {
    std::string pattern;  // normalized (lowercase, separators collapsed)
    EthnicityCategory category = EthnicityCategory::Unclassified;
    int priority = 0;
};

// Priority-ordered pattern table mapping origin wordings to the four
// categories. Patterns match whole words; when several match, higher
// priority wins, then the longer pattern, then earlier position in text.
class MappingTable {
  public:
    MappingTable() = default;

    // Parses the tab-separated table format:
    //   pattern<TAB>category<TAB>priority
    // '#' starts a comment, blank lines are skipped.
    static MappingTable from_document(std::string_view text);

    static const MappingTable& builtin_default();
    // The default table, in the same document format from_document() reads.
    static std::string_view builtin_default_document();

    const std::vector<MappingEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

    struct Match {
        size_t entry_index = 0;
        size_t token_begin = 0;  // index into the token stream
        size_t token_count = 0;
    };

    // Best classification match anywhere in the token stream
    // (priority, then pattern length, then earliest position).
    std::optional<Match> best_match(const std::vector<Token>& tokens) const;
    // Earliest match in the token stream (position, then length, then priority);
    // used by the rule-based extractor where first mention wins.
    std::optional<Match> first_match(const std::vector<Token>& tokens) const;

    EthnicityCategory category_of(const Match& m) const { return entries_[m.entry_index].category; }

  private:
    std::vector<MappingEntry> entries_;
    std::vector<std::vector<std::string>> entry_tokens_;

    bool matches_at(size_t entry_index, const std::vector<Token>& tokens, size_t pos) const;
};

// Maps free-form origin text to a category. Total: anything without a table
// match (including empty text) comes back Unclassified.
EthnicityCategory classify_origin(std::string_view origin_text, const MappingTable& table);

struct IntersectionKey {
    Gender gender = Gender::Female;
    EthnicityCategory ethnicity = EthnicityCategory::European;
    bool operator==(const IntersectionKey&) const = default;
};

// Throws std::invalid_argument for Unstated/Unclassified inputs.
IntersectionKey intersection_key(Gender g, EthnicityCategory e);
// Index into the canonical intersection order (ethnicity-major, female first).
size_t intersection_index(Gender g, EthnicityCategory e);
const std::array<IntersectionKey, 8>& all_intersection_keys();
std::string intersection_name(const IntersectionKey& key);

}  // namespace bame
