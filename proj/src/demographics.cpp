#include "bame/demographics.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace bame {
namespace {

// Default origin->category table. Priorities: 3 = explicit descriptors,
// 2 = composite forms, 1 = nationalities, 0 = bare "american" fallback
// (a plain U.S. character defaults to the majority demographic unless a
// more specific word appears).
//
// Placement notes for the judgment calls:
//   - Middle Eastern and Arab map to api (grouped with Asia).
//   - North African Arab states (egyptian, moroccan, algerian, tunisian,
//     libyan) map to african by continental geography.
//   - turkish -> api, russian -> european (predominant demographic).
//   - brazilian -> hispanic_latino (Latino in the US sense, not Hispanic).
//   - spanish/portuguese -> european (the countries themselves).
//   - Vague ethnicities (e.g. "Jewish") are deliberately absent and come
//     back Unclassified; so do "georgian" (collides with the US state) and
//     "trinidadian" (no predominant group). "Native American" has no bucket
//     in this four-way scheme, so the bare-"american" fallback misfiles it;
//     known limit.
const char* kDefaultTableDocument = R"(# origin pattern -> category, tab-separated: pattern<TAB>category<TAB>priority
# descriptors
white	european	3
caucasian	european	3
european	european	3
black	african	3
african	african	3
afro	african	3
asian	api	3
pacific islander	api	3
native hawaiian	api	3
middle eastern	api	3
arab	api	3
arabic	api	3
hispanic	hispanic_latino	3
latino	hispanic_latino	3
latina	hispanic_latino	3
latinx	hispanic_latino	3
# composite forms
african american	african	2
korean-american	api	2
asian american	api	2
mexican american	hispanic_latino	2
latin american	hispanic_latino	2
south american	hispanic_latino	2
central american	hispanic_latino	2
# nationalities: european
canadian	european	1
australian	european	1
new zealander	european	1
british	european	1
english	european	1
scottish	european	1
welsh	european	1
irish	european	1
french	european	1
german	european	1
italian	european	1
spanish	european	1
spaniard	european	1
portuguese	european	1
greek	european	1
dutch	european	1
belgian	european	1
swiss	european	1
austrian	european	1
swedish	european	1
norwegian	european	1
danish	european	1
finnish	european	1
icelandic	european	1
polish	european	1
czech	european	1
slovak	european	1
hungarian	european	1
romanian	european	1
bulgarian	european	1
ukrainian	european	1
russian	european	1
belarusian	european	1
serbian	european	1
croatian	european	1
bosnian	european	1
albanian	european	1
macedonian	european	1
slovenian	european	1
lithuanian	european	1
latvian	european	1
estonian	european	1
maltese	european	1
# nationalities: african
nigerian	african	1
kenyan	african	1
ethiopian	african	1
ghanaian	african	1
somali	african	1
senegalese	african	1
sudanese	african	1
ugandan	african	1
tanzanian	african	1
zimbabwean	african	1
zambian	african	1
congolese	african	1
cameroonian	african	1
ivorian	african	1
malian	african	1
rwandan	african	1
south african	african	1
botswanan	african	1
namibian	african	1
mozambican	african	1
angolan	african	1
liberian	african	1
sierra leonean	african	1
gambian	african	1
eritrean	african	1
egyptian	african	1
moroccan	african	1
algerian	african	1
tunisian	african	1
libyan	african	1
jamaican	african	1
haitian	african	1
bahamian	african	1
barbadian	african	1
# nationalities: api
chinese	api	1
japanese	api	1
korean	api	1
indian	api	1
vietnamese	api	1
filipino	api	1
filipina	api	1
thai	api	1
indonesian	api	1
malaysian	api	1
singaporean	api	1
pakistani	api	1
bangladeshi	api	1
sri lankan	api	1
nepali	api	1
nepalese	api	1
burmese	api	1
cambodian	api	1
laotian	api	1
mongolian	api	1
taiwanese	api	1
hawaiian	api	1
samoan	api	1
tongan	api	1
fijian	api	1
maori	api	1
bhutanese	api	1
maldivian	api	1
kazakh	api	1
uzbek	api	1
kyrgyz	api	1
tajik	api	1
turkmen	api	1
afghan	api	1
lebanese	api	1
iranian	api	1
persian	api	1
iraqi	api	1
syrian	api	1
saudi	api	1
yemeni	api	1
omani	api	1
qatari	api	1
kuwaiti	api	1
emirati	api	1
bahraini	api	1
jordanian	api	1
israeli	api	1
palestinian	api	1
turkish	api	1
armenian	api	1
azerbaijani	api	1
# nationalities: hispanic_latino
mexican	hispanic_latino	1
cuban	hispanic_latino	1
puerto rican	hispanic_latino	1
dominican	hispanic_latino	1
colombian	hispanic_latino	1
venezuelan	hispanic_latino	1
peruvian	hispanic_latino	1
ecuadorian	hispanic_latino	1
bolivian	hispanic_latino	1
chilean	hispanic_latino	1
argentine	hispanic_latino	1
argentinian	hispanic_latino	1
paraguayan	hispanic_latino	1
uruguayan	hispanic_latino	1
brazilian	hispanic_latino	1
guatemalan	hispanic_latino	1
honduran	hispanic_latino	1
salvadoran	hispanic_latino	1
nicaraguan	hispanic_latino	1
costa rican	hispanic_latino	1
panamanian	hispanic_latino	1
# bare-US fallback
american	european	0
)";

std::vector<std::string> pattern_words(std::string_view normalized) {
    std::vector<std::string> words;
    for (const Token& t : tokenize(normalized)) words.push_back(t.text);
    return words;
}

}  // namespace

std::string_view to_string(Gender g) {
    switch (g) {
        case Gender::Female: return "female";
        case Gender::Male: return "male";
        case Gender::Unstated: return "unstated";
    }
    return "unstated";
}

std::string_view to_string(EthnicityCategory e) {
    switch (e) {
        case EthnicityCategory::European: return "european";
        case EthnicityCategory::African: return "african";
        case EthnicityCategory::Api: return "api";
        case EthnicityCategory::HispanicLatino: return "hispanic_latino";
        case EthnicityCategory::Unclassified: return "unclassified";
    }
    return "unclassified";
}

Gender gender_from_string(std::string_view s) {
    if (s == "female") return Gender::Female;
    if (s == "male") return Gender::Male;
    if (s == "unstated") return Gender::Unstated;
    throw ConfigError("unknown gender token '" + std::string(s) + "'");
}

EthnicityCategory ethnicity_from_string(std::string_view s) {
    if (s == "european") return EthnicityCategory::European;
    if (s == "african") return EthnicityCategory::African;
    if (s == "api") return EthnicityCategory::Api;
    if (s == "hispanic_latino") return EthnicityCategory::HispanicLatino;
    if (s == "unclassified") return EthnicityCategory::Unclassified;
    throw ConfigError("unknown ethnicity category token '" + std::string(s) + "'");
}

MappingTable MappingTable::from_document(std::string_view text) {
    MappingTable table;
    std::set<std::string> seen;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        std::string trimmed = trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;

        size_t tab1 = line.find('\t');
        size_t tab2 = tab1 == std::string_view::npos ? std::string_view::npos : line.find('\t', tab1 + 1);
        if (tab1 == std::string_view::npos || tab2 == std::string_view::npos) {
            throw ConfigError("mapping table line " + std::to_string(line_no) +
                              ": expected pattern<TAB>category<TAB>priority");
        }
        std::string pattern = normalize_phrase(line.substr(0, tab1));
        std::string category_token = trim(line.substr(tab1 + 1, tab2 - tab1 - 1));
        std::string priority_token = trim(line.substr(tab2 + 1));
        if (pattern.empty()) {
            throw ConfigError("mapping table line " + std::to_string(line_no) + ": empty pattern");
        }
        if (!seen.insert(pattern).second) {
            throw ConfigError("mapping table line " + std::to_string(line_no) + ": duplicate pattern '" +
                              pattern + "'");
        }
        EthnicityCategory category = EthnicityCategory::Unclassified;
        try {
            category = ethnicity_from_string(category_token);
        } catch (const std::invalid_argument&) {
        }
        if (category == EthnicityCategory::Unclassified) {
            throw ConfigError("mapping table line " + std::to_string(line_no) +
                              ": category must be one of european|african|api|hispanic_latino");
        }
        int priority = 0;
        auto [p, ec] = std::from_chars(priority_token.data(), priority_token.data() + priority_token.size(), priority);
        if (ec != std::errc() || p != priority_token.data() + priority_token.size()) {
            throw ConfigError("mapping table line " + std::to_string(line_no) + ": bad priority '" +
                              priority_token + "'");
        }
        table.entries_.push_back(MappingEntry{pattern, category, priority});
        table.entry_tokens_.push_back(pattern_words(pattern));
    }
    return table;
}

const MappingTable& MappingTable::builtin_default() {
    static const MappingTable table = MappingTable::from_document(kDefaultTableDocument);
    return table;
}

std::string_view MappingTable::builtin_default_document() { return kDefaultTableDocument; }

bool MappingTable::matches_at(size_t entry_index, const std::vector<Token>& tokens, size_t pos) const {
    const std::vector<std::string>& words = entry_tokens_[entry_index];
    if (pos + words.size() > tokens.size()) return false;
    for (size_t i = 0; i < words.size(); ++i) {
        if (tokens[pos + i].text != words[i]) return false;
    }
    return true;
}

std::optional<MappingTable::Match> MappingTable::best_match(const std::vector<Token>& tokens) const {
    std::optional<Match> best;
    for (size_t e = 0; e < entries_.size(); ++e) {
        size_t len = entry_tokens_[e].size();
        if (len == 0 || len > tokens.size()) continue;
        for (size_t pos = 0; pos + len <= tokens.size(); ++pos) {
            if (!matches_at(e, tokens, pos)) continue;
            if (!best) {
                best = Match{e, pos, len};
                break;
            }
            const MappingEntry& cur = entries_[e];
            const MappingEntry& have = entries_[best->entry_index];
            bool better = false;
            if (cur.priority != have.priority) {
                better = cur.priority > have.priority;
            } else if (len != best->token_count) {
                better = len > best->token_count;
            } else if (pos != best->token_begin) {
                better = pos < best->token_begin;
            }
            if (better) best = Match{e, pos, len};
            break;  // later positions of the same entry can't beat this one
        }
    }
    return best;
}

std::optional<MappingTable::Match> MappingTable::first_match(const std::vector<Token>& tokens) const {
    std::optional<Match> best;
    for (size_t e = 0; e < entries_.size(); ++e) {
        size_t len = entry_tokens_[e].size();
        if (len == 0 || len > tokens.size()) continue;
        for (size_t pos = 0; pos + len <= tokens.size(); ++pos) {
            if (!matches_at(e, tokens, pos)) continue;
            if (!best) {
                best = Match{e, pos, len};
                break;
            }
            const MappingEntry& cur = entries_[e];
            const MappingEntry& have = entries_[best->entry_index];
            bool better = false;
            if (pos != best->token_begin) {
                better = pos < best->token_begin;
            } else if (len != best->token_count) {
                better = len > best->token_count;
            } else if (cur.priority != have.priority) {
                better = cur.priority > have.priority;
            }
            if (better) best = Match{e, pos, len};
            break;
        }
    }
    return best;
}

EthnicityCategory classify_origin(std::string_view origin_text, const MappingTable& table) {
    std::vector<Token> tokens = tokenize(origin_text);
    if (tokens.empty()) return EthnicityCategory::Unclassified;
    if (auto m = table.best_match(tokens)) return table.category_of(*m);
    return EthnicityCategory::Unclassified;
}

IntersectionKey intersection_key(Gender g, EthnicityCategory e) {
    if (g == Gender::Unstated) throw std::invalid_argument("intersection_key: gender is unstated");
    if (e == EthnicityCategory::Unclassified) {
        throw std::invalid_argument("intersection_key: ethnicity is unclassified");
    }
    return IntersectionKey{g, e};
}

size_t intersection_index(Gender g, EthnicityCategory e) {
    IntersectionKey key = intersection_key(g, e);
    size_t ei = static_cast<size_t>(key.ethnicity);
    size_t gi = key.gender == Gender::Female ? 0 : 1;
    return ei * 2 + gi;
}

const std::array<IntersectionKey, 8>& all_intersection_keys() {
    static const std::array<IntersectionKey, 8> keys = [] {
        std::array<IntersectionKey, 8> k{};
        const EthnicityCategory eths[4] = {EthnicityCategory::European, EthnicityCategory::African,
                                           EthnicityCategory::Api, EthnicityCategory::HispanicLatino};
        size_t i = 0;
        for (EthnicityCategory e : eths) {
            for (Gender g : {Gender::Female, Gender::Male}) k[i++] = IntersectionKey{g, e};
        }
        return k;
    }();
    return keys;
}

std::string intersection_name(const IntersectionKey& key) {
    return std::string(to_string(key.ethnicity)) + "_" + std::string(to_string(key.gender));
}

}  // namespace bame
