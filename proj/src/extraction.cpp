#include "bame/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_map>
#include <unordered_set>

#include "bame/csv.hpp"

namespace bame {
namespace {

const char* kFemaleDocument = R"(# tokens that mark a female character
female
woman
women
girl
lady
she
her
hers
herself
waitress
actress
businesswoman
spokeswoman
chairwoman
congresswoman
heroine
mother
mom
wife
daughter
sister
aunt
grandmother
mrs
ms
)";

const char* kMaleDocument = R"(# tokens that mark a male character
male
man
men
boy
gentleman
he
him
his
himself
waiter
businessman
spokesman
chairman
congressman
father
dad
husband
son
brother
uncle
grandfather
mr
)";

const std::unordered_set<std::string>& pronoun_tokens() {
    static const std::unordered_set<std::string> set = {"she", "her",     "hers",   "herself",
                                                        "he",  "him",     "his",    "himself"};
    return set;
}

std::vector<std::string> parse_token_lines(std::string_view doc) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= doc.size()) {
        size_t eol = doc.find('\n', pos);
        std::string_view line = doc.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? doc.size() + 1 : eol + 1;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::string normalized = normalize_phrase(t);
        if (normalized.find(' ') != std::string::npos) {
            throw ConfigError("lexicon: one token per line, got '" + t + "'");
        }
        out.push_back(normalized);
    }
    return out;
}

struct LexiconMap {
    std::unordered_map<std::string, Gender> map;
};

}  // namespace

std::string_view to_string(LabelSource source) {
    return source == LabelSource::Agent ? "agent" : "rule_based";
}

const GenderLexicon& GenderLexicon::builtin_default() {
    static const GenderLexicon lex = GenderLexicon::from_documents(kFemaleDocument, kMaleDocument);
    return lex;
}

std::string_view GenderLexicon::builtin_female_document() { return kFemaleDocument; }
std::string_view GenderLexicon::builtin_male_document() { return kMaleDocument; }

GenderLexicon GenderLexicon::from_documents(std::string_view female_doc, std::string_view male_doc) {
    GenderLexicon lex;
    std::unordered_set<std::string> seen;
    std::vector<std::string> female = parse_token_lines(female_doc);
    std::vector<std::string> male = parse_token_lines(male_doc);
    if (female.empty() || male.empty()) {
        throw ConfigError("lexicon: each document needs at least one token");
    }
    for (const std::string& t : female) {
        if (!seen.insert(t).second) throw ConfigError("lexicon: duplicate token '" + t + "'");
        lex.tokens_.emplace_back(t, Gender::Female);
    }
    for (const std::string& t : male) {
        if (!seen.insert(t).second) throw ConfigError("lexicon: duplicate token '" + t + "'");
        lex.tokens_.emplace_back(t, Gender::Male);
    }
    return lex;
}

std::optional<Gender> GenderLexicon::lookup(std::string_view token) const {
    std::string key = to_lower_ascii(token);
    for (const auto& [t, g] : tokens_) {
        if (t == key) return g;
    }
    return std::nullopt;
}

const char* const kExtractionAgentPrompt =
    "You are an information extraction agent. Given a batch of stories, extract the gender and "
    "nationality or ethnicity of the main character of each story. Only return explicitly mentioned "
    "gender and nationality or ethnicity. Do not infer unstated attributes.";

const char* const kDescriptorAgentPrompt =
    "You are an information extraction agent. Given a story, extract and list all descriptive terms "
    "directly modifying or related to the main character, along with verbs describing their roles. "
    "Return only terms explicitly stated by each narrative. Do not infer unstated attributes.";

namespace {

std::string slice(std::string_view story, size_t begin, size_t end) {
    return trim(story.substr(begin, end - begin));
}

// Pattern (a): "(Descriptor gender)" anywhere in the story.
bool parenthetical_label(std::string_view story, const GenderLexicon& lexicon,
                         std::optional<std::string>& gender_text, std::optional<std::string>& origin_text) {
    size_t open = story.find('(');
    while (open != std::string_view::npos) {
        size_t close = story.find(')', open + 1);
        if (close == std::string_view::npos) break;
        std::string_view inside = story.substr(open + 1, close - open - 1);
        std::vector<Token> tokens = tokenize(inside);
        if (!tokens.empty()) {
            if (lexicon.lookup(tokens.back().text)) {
                const Token& g = tokens.back();
                gender_text = slice(inside, g.begin, g.end);
                if (tokens.size() > 1) {
                    origin_text = slice(inside, tokens.front().begin, tokens[tokens.size() - 2].end);
                }
                return true;
            }
        }
        open = story.find('(', close + 1);
    }
    return false;
}

// Pattern (b): "a/an <descriptors> <gender noun>" with a short window.
bool apposition_label(std::string_view story, const std::vector<Token>& tokens,
                      const GenderLexicon& lexicon, const MappingTable& table,
                      std::optional<std::string>& gender_text, std::optional<std::string>& origin_text) {
    constexpr size_t kWindow = 8;
    auto phrase_break = [&](size_t prev, size_t next) {
        std::string_view gap = story.substr(tokens[prev].end, tokens[next].begin - tokens[prev].end);
        return gap.find_first_of(".,;:()!?") != std::string_view::npos;
    };
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].text != "a" && tokens[i].text != "an") continue;
        size_t limit = std::min(tokens.size(), i + 1 + kWindow);
        for (size_t j = i + 1; j < limit; ++j) {
            if (phrase_break(j - 1, j)) break;
            auto g = lexicon.lookup(tokens[j].text);
            if (!g || pronoun_tokens().count(tokens[j].text)) continue;
            gender_text = slice(story, tokens[j].begin, tokens[j].end);
            if (j > i + 1 && !origin_text) {
                std::vector<Token> window(tokens.begin() + static_cast<long>(i) + 1,
                                          tokens.begin() + static_cast<long>(j));
                if (auto m = table.first_match(window)) {
                    origin_text = slice(story, window[m->token_begin].begin,
                                        window[m->token_begin + m->token_count - 1].end);
                }
            }
            return true;
        }
    }
    return false;
}

}  // namespace

RawExtraction rule_based_extract(std::string_view story, int story_index, const MappingTable& table,
                                 const GenderLexicon& lexicon) {
    RawExtraction out;
    out.story_index = story_index;
    out.source = LabelSource::RuleBased;

    std::vector<Token> tokens = tokenize(story);

    if (!parenthetical_label(story, lexicon, out.gender_text, out.origin_text)) {
        if (!apposition_label(story, tokens, lexicon, table, out.gender_text, out.origin_text)) {
            // (c) first gender word anywhere
            for (const Token& t : tokens) {
                if (lexicon.lookup(t.text)) {
                    out.gender_text = slice(story, t.begin, t.end);
                    break;
                }
            }
        }
    }
    if (!out.origin_text) {
        if (auto m = table.first_match(tokens)) {
            out.origin_text = slice(story, tokens[m->token_begin].begin,
                                    tokens[m->token_begin + m->token_count - 1].end);
        }
    }

    if (out.gender_text) {
        // the stored text is a single lexicon word by construction
        std::vector<Token> gt = tokenize(*out.gender_text);
        if (!gt.empty()) {
            if (auto g = lexicon.lookup(gt.front().text)) out.resolved.gender = *g;
        }
    }
    if (out.origin_text) {
        out.resolved.origin_text = *out.origin_text;
        out.resolved.ethnicity = classify_origin(*out.origin_text, table);
    }
    return out;
}

std::vector<RawExtraction> extract_labels_rule_based(std::span<const std::string> stories,
                                                     const MappingTable& table,
                                                     const GenderLexicon& lexicon) {
    std::vector<RawExtraction> out;
    out.reserve(stories.size());
    for (size_t i = 0; i < stories.size(); ++i) {
        out.push_back(rule_based_extract(stories[i], static_cast<int>(i), table, lexicon));
    }
    return out;
}

namespace {

bool is_absent_marker(std::string_view value) {
    static const std::unordered_set<std::string> markers = {
        "", "unstated", "none", "unknown", "not mentioned", "not stated", "unspecified", "n a", "na"};
    return markers.count(normalize_phrase(value)) > 0;
}

// Pulls "key: value" out of an agent reply line section.
std::optional<std::string> field_after(std::string_view line_lower, std::string_view line,
                                       std::initializer_list<std::string_view> keys) {
    for (std::string_view key : keys) {
        size_t at = line_lower.find(key);
        if (at == std::string_view::npos) continue;
        size_t sep = line.find_first_of(":=", at + key.size());
        if (sep == std::string_view::npos) continue;
        size_t end = line.find(';', sep + 1);
        if (end == std::string_view::npos) end = line.size();
        return trim(line.substr(sep + 1, end - sep - 1));
    }
    return std::nullopt;
}

struct ParsedAgentLine {
    int index = 0;
    std::optional<std::string> gender;
    std::optional<std::string> origin;
};

std::vector<ParsedAgentLine> parse_agent_reply(const std::string& reply) {
    std::vector<ParsedAgentLine> lines;
    size_t pos = 0;
    while (pos <= reply.size()) {
        size_t eol = reply.find('\n', pos);
        std::string line = reply.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        pos = eol == std::string::npos ? reply.size() + 1 : eol + 1;

        std::string t = trim(line);
        if (t.empty()) continue;
        size_t d = 0;
        while (d < t.size() && std::isdigit(static_cast<unsigned char>(t[d]))) ++d;
        if (d == 0) continue;
        ParsedAgentLine parsed;
        parsed.index = std::stoi(t.substr(0, d));
        std::string rest = t.substr(d);
        std::string rest_lower = to_lower_ascii(rest);
        parsed.gender = field_after(rest_lower, rest, {"gender"});
        parsed.origin = field_after(rest_lower, rest, {"origin", "ethnicity", "nationality"});
        lines.push_back(std::move(parsed));
    }
    return lines;
}

}  // namespace

ExtractionOutcome extract_labels(std::span<const std::string> stories, Backend& backend,
                                 const MappingTable& table, const GenderLexicon& lexicon) {
    ExtractionOutcome outcome;
    outcome.extractions.resize(stories.size());

    std::string prompt = kExtractionAgentPrompt;
    prompt += "\n\n";
    for (size_t i = 0; i < stories.size(); ++i) {
        prompt += std::to_string(i + 1) + ". " + stories[i] + "\n\n";
    }

    CompletionRequest request;
    request.model = backend.model();
    request.messages = {ChatMessage{Role::User, prompt}};
    request.request_tag = "extract";

    std::string reply;
    bool call_failed = false;
    try {
        reply = backend.complete(request).text;
    } catch (const BackendError& e) {
        call_failed = true;
        outcome.used_fallback = true;
        outcome.fallback_reason =
            "extraction agent call failed (" + std::string(to_string(e.kind())) + "): " + e.what();
    }

    std::vector<bool> covered(stories.size(), false);
    if (!call_failed) {
        for (const ParsedAgentLine& line : parse_agent_reply(reply)) {
            if (line.index < 1 || line.index > static_cast<int>(stories.size())) continue;
            size_t idx = static_cast<size_t>(line.index - 1);
            if (covered[idx]) continue;
            covered[idx] = true;

            RawExtraction ex;
            ex.story_index = static_cast<int>(idx);
            ex.source = LabelSource::Agent;
            if (line.gender && !is_absent_marker(*line.gender)) {
                ex.gender_text = *line.gender;
                for (const Token& t : tokenize(*line.gender)) {
                    if (auto g = lexicon.lookup(t.text)) {
                        ex.resolved.gender = *g;
                        break;
                    }
                }
            }
            if (line.origin && !is_absent_marker(*line.origin)) {
                ex.origin_text = *line.origin;
                ex.resolved.origin_text = *line.origin;
                ex.resolved.ethnicity = classify_origin(*line.origin, table);
            }
            outcome.extractions[idx] = std::move(ex);
        }
    }

    size_t missing = 0;
    for (size_t i = 0; i < stories.size(); ++i) {
        if (covered[i]) continue;
        ++missing;
        outcome.extractions[i] = rule_based_extract(stories[i], static_cast<int>(i), table, lexicon);
    }
    if (missing > 0 && !call_failed) {
        outcome.used_fallback = true;
        outcome.fallback_reason = "agent reply covered " + std::to_string(stories.size() - missing) +
                                  " of " + std::to_string(stories.size()) + " stories";
    }
    return outcome;
}

namespace {

bool has_suffix(std::string_view word, std::string_view suffix) {
    return word.size() > suffix.size() && word.substr(word.size() - suffix.size()) == suffix;
}

bool verb_like(std::string_view word) {
    static const std::unordered_set<std::string> stop = {"during", "being",   "thing", "something",
                                                         "anything", "everything", "nothing", "morning",
                                                         "evening", "spring",  "string", "king"};
    if (stop.count(std::string(word))) return false;
    return word.size() >= 5 && (has_suffix(word, "ed") || has_suffix(word, "ing"));
}

bool adjective_like(std::string_view word) {
    static const std::unordered_set<std::string> stop = {"table", "people", "little", "male", "female",
                                                         "while", "single", "double", "local"};
    if (stop.count(std::string(word))) return false;
    if (word.size() < 5) return false;
    for (std::string_view suffix : {"ful", "ous", "ive", "ant", "ent", "ble", "ish", "less", "ical",
                                    "ic", "ate", "al"}) {
        if (has_suffix(word, suffix)) return true;
    }
    return false;
}

void append_term(DescriptorList& list, std::unordered_set<std::string>& seen, std::string term,
                 TermKind kind) {
    if (term.empty() || !seen.insert(term).second) return;
    list.terms.push_back(DescriptorTerm{std::move(term), kind});
}

}  // namespace

DescriptorList extract_descriptors_offline(std::string_view story, int story_index) {
    DescriptorList list;
    list.story_index = story_index;
    std::unordered_set<std::string> seen;
    for (const Token& t : tokenize(story)) {
        if (verb_like(t.text)) {
            append_term(list, seen, t.text, TermKind::RoleVerb);
        } else if (adjective_like(t.text)) {
            append_term(list, seen, t.text, TermKind::Modifier);
        }
    }
    return list;
}

DescriptorList extract_descriptors(std::string_view story, int story_index, Backend& backend) {
    CompletionRequest request;
    request.model = backend.model();
    request.messages = {
        ChatMessage{Role::User, std::string(kDescriptorAgentPrompt) + "\n\n" + std::string(story)}};
    request.request_tag = "descriptors";

    std::string reply;
    try {
        reply = backend.complete(request).text;
    } catch (const BackendError&) {
        return extract_descriptors_offline(story, story_index);
    }

    DescriptorList list;
    list.story_index = story_index;
    std::unordered_set<std::string> seen;
    size_t pos = 0;
    while (pos <= reply.size()) {
        size_t end = reply.find_first_of(",;\n", pos);
        if (end == std::string::npos) end = reply.size();
        std::string term = normalize_phrase(reply.substr(pos, end - pos));
        pos = end + 1;
        if (term.empty()) continue;
        TermKind kind = TermKind::Modifier;
        std::vector<Token> words = tokenize(term);
        if (!words.empty() && verb_like(words.back().text)) kind = TermKind::RoleVerb;
        append_term(list, seen, std::move(term), kind);
    }
    return list;
}

std::vector<Disagreement> cross_check(std::span<const RawExtraction> agent,
                                      std::span<const RawExtraction> rule, std::string_view record_id) {
    std::vector<Disagreement> rows;
    size_t n = std::min(agent.size(), rule.size());
    for (size_t i = 0; i < n; ++i) {
        const RawExtraction& a = agent[i];
        const RawExtraction& r = rule[i];
        if (a.resolved.gender == r.resolved.gender && a.resolved.ethnicity == r.resolved.ethnicity) {
            continue;
        }
        Disagreement row;
        row.story_id = std::string(record_id) + "#" + std::to_string(a.story_index);
        row.agent_gender = std::string(to_string(a.resolved.gender));
        row.rule_gender = std::string(to_string(r.resolved.gender));
        row.agent_origin = a.origin_text.value_or("");
        row.rule_origin = r.origin_text.value_or("");
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string disagreement_csv(std::span<const Disagreement> rows) {
    std::string out;
    const std::vector<std::string> header = {"story_id", "agent_gender", "rule_gender", "agent_origin",
                                             "rule_origin"};
    out += csv::format_row(header);
    for (const Disagreement& row : rows) {
        const std::vector<std::string> fields = {row.story_id, row.agent_gender, row.rule_gender,
                                                 row.agent_origin, row.rule_origin};
        out += csv::format_row(fields);
    }
    return out;
}

}  // namespace bame
