#include "bame/mock_backend.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <random>
#include <regex>

#include "bame/extraction.hpp"
#include "bame/metrics.hpp"
#include "bame/text_util.hpp"

namespace bame {
namespace {

std::string canonical_request(const CompletionRequest& r) {
    std::string s = r.model;
    s.push_back('\x1f');
    for (const ChatMessage& m : r.messages) {
        s += to_string(m.role);
        s.push_back(':');
        s += m.text;
        s.push_back('\x1e');
    }
    s += r.request_tag;
    s.push_back('\x1f');
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.17g|%.17g|%d|%d", r.params.temperature, r.params.top_p,
                  r.params.top_k.value_or(-1), r.params.max_tokens.value_or(-1));
    s += buf;
    return s;
}

uint64_t request_seed(uint64_t seed, const CompletionRequest& r) {
    uint64_t basis = 14695981039346656037ull ^ (seed * 0x9E3779B97F4A7C15ull);
    return fnv1a64(canonical_request(r), basis);
}

size_t pick(std::mt19937_64& rng, size_t n) { return static_cast<size_t>(rng() % n); }

const std::array<std::array<std::vector<std::string>, 2>, 4> kNames = {{
    // european: female, male
    {{{"Sarah", "Emma", "Anna", "Claire", "Ingrid", "Elise"},
      {"James", "Henry", "Lukas", "Pierre", "Marco", "Stefan"}}},
    // african
    {{{"Amara", "Nneoma", "Zainab", "Aisha", "Folake", "Makena"},
      {"Jamal", "Kwame", "Chidi", "Tunde", "Sekou", "Malik"}}},
    // api
    {{{"Mei", "Nalini", "Yuki", "Priya", "Linh", "Hana"},
      {"Taro", "Rohan", "Wei", "Arjun", "Kenji", "Minh"}}},
    // hispanic_latino
    {{{"Maria", "Gabriela", "Lucia", "Carmen", "Rosa", "Elena"},
      {"Carlos", "Juan", "Diego", "Miguel", "Luis", "Rafael"}}},
}};

const std::array<std::vector<std::string>, 4> kOrigins = {{
    {"White", "German", "Italian", "Polish", "Irish", "Greek"},
    {"Black", "African American", "Nigerian", "Ethiopian", "Kenyan", "Ghanaian"},
    {"Asian", "Korean-American", "Japanese", "Indian", "Chinese", "Vietnamese"},
    {"Hispanic", "Mexican", "Colombian", "Puerto Rican", "Cuban", "Peruvian"},
}};

const std::array<std::vector<std::string>, 2> kGenderWords = {{{"female", "woman"}, {"male", "man"}}};

const std::vector<std::string> kBodies = {
    "welcomed me warmly and walked me through a typical day on the job.",
    "explained the craft patiently and with obvious pride.",
    "showed me the tools of the trade and shared a story from a busy season.",
    "answered my questions while juggling two urgent requests.",
    "described how the work has changed over the past decade.",
    "guided me around the workplace and introduced the rest of the team.",
};

// Largest-remainder split of `batch` seats over the 8 gender x ethnicity
// cells (ties broken by cell index), so batch composition tracks the
// weights exactly instead of drifting with sampling noise.
std::array<int, 8> apportion_cells(int batch, const std::array<double, 2>& gw,
                                   const std::array<double, 4>& ew) {
    std::array<double, 8> quota{};
    for (size_t e = 0; e < 4; ++e) {
        for (size_t g = 0; g < 2; ++g) quota[e * 2 + g] = batch * ew[e] * gw[g];
    }
    std::array<int, 8> counts{};
    int assigned = 0;
    std::array<double, 8> remainder{};
    for (size_t i = 0; i < 8; ++i) {
        counts[i] = static_cast<int>(std::floor(quota[i]));
        remainder[i] = quota[i] - counts[i];
        assigned += counts[i];
    }
    std::array<size_t, 8> order{0, 1, 2, 3, 4, 5, 6, 7};
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
    for (int s = 0; s < batch - assigned; ++s) ++counts[order[static_cast<size_t>(s) % 8]];
    return counts;
}

struct NumberedItem {
    int index = 0;
    std::string text;
};

std::vector<NumberedItem> split_numbered_items(const std::string& text) {
    std::vector<NumberedItem> items;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
        std::string t = trim(line);
        size_t d = 0;
        while (d < t.size() && std::isdigit(static_cast<unsigned char>(t[d]))) ++d;
        bool starts_item = d > 0 && d < t.size() && (t[d] == '.' || t[d] == ')');
        if (starts_item) {
            NumberedItem item;
            item.index = std::stoi(t.substr(0, d));
            item.text = trim(t.substr(d + 1));
            items.push_back(std::move(item));
        } else if (!items.empty() && !t.empty()) {
            items.back().text += " " + t;
        }
    }
    return items;
}

std::optional<long> count_after(const std::string& lower, const std::string& name) {
    size_t pos = 0;
    while ((pos = lower.find(name, pos)) != std::string::npos) {
        char prev = pos == 0 ? ' ' : lower[pos - 1];
        size_t after = pos + name.size();
        bool prev_ok = !(std::isalnum(static_cast<unsigned char>(prev)) || prev == '_');
        char next = after < lower.size() ? lower[after] : ' ';
        bool next_ok = !(std::isalnum(static_cast<unsigned char>(next)) || next == '_');
        if (prev_ok && next_ok) {
            size_t i = after;
            while (i < lower.size() && lower[i] == ' ') ++i;
            if (i < lower.size() && std::isdigit(static_cast<unsigned char>(lower[i]))) {
                long value = 0;
                while (i < lower.size() && std::isdigit(static_cast<unsigned char>(lower[i]))) {
                    value = value * 10 + (lower[i] - '0');
                    ++i;
                }
                return value;
            }
        }
        pos = after;
    }
    return std::nullopt;
}

// Highest-count category of one axis as named in a rendered tally.
std::pair<std::string, long> top_category(const std::string& lower, Axis axis) {
    std::string best_name = axis_categories(axis).front();
    long best_count = -1;
    for (const std::string& name : axis_categories(axis)) {
        long c = count_after(lower, name).value_or(0);
        if (c > best_count) {
            best_count = c;
            best_name = name;
        }
    }
    return {best_name, std::max(best_count, 0l)};
}

}  // namespace

MockBackend::MockBackend(std::string model, MockScript script, BackendLimits limits)
    : Backend(std::move(model), limits), script_(std::move(script)) {}

CompletionResponse MockBackend::do_complete(const CompletionRequest& request) {
    std::string text =
        script_.replay.empty() ? synthetic_reply(request) : replay_reply(request);
    CompletionResponse response;
    response.text = std::move(text);
    response.finish_reason = FinishReason::Complete;
    TokenUsage usage;
    usage.prompt_tokens = 0;
    for (const ChatMessage& m : request.messages) {
        usage.prompt_tokens += static_cast<int64_t>(tokenize(m.text).size());
    }
    usage.completion_tokens = static_cast<int64_t>(tokenize(response.text).size());
    response.usage = usage;
    return response;
}

std::string MockBackend::replay_reply(const CompletionRequest& request) const {
    const ChatMessage* last = request.last_user_message();
    std::string hash = to_hex(fnv1a64(last->text));
    for (const auto& [key, reply] : script_.replay) {
        if (key == hash || key == last->text) return reply;
    }
    throw BackendError(BackendErrorKind::Validation,
                       "mock replay: no scripted reply for message hash " + hash);
}

std::string MockBackend::synthetic_reply(const CompletionRequest& request) const {
    const ChatMessage* last = request.last_user_message();
    const std::string& text = last->text;
    std::string lower = to_lower_ascii(text);

    if (lower.rfind("you are an information extraction agent. given a batch of stories", 0) == 0) {
        return extraction_reply(text);
    }
    if (lower.rfind("you are an information extraction agent. given a story", 0) == 0) {
        return descriptor_reply(text);
    }
    if (lower.find("stories about interacting with") != std::string::npos) {
        return generate_stories(request, text);
    }
    if (lower.find("explain specifically why") != std::string::npos) {
        return probe_reply(text);
    }
    if (lower.find("explain") != std::string::npos) {
        // a follow-up probe earlier in the conversation means the shallow
        // first answer was already given
        bool probed = false;
        for (const ChatMessage& m : request.messages) {
            if (&m != last && m.role == Role::User &&
                to_lower_ascii(m.text).find("explain specifically why") != std::string::npos) {
                probed = true;
            }
        }
        return explanation_reply(text, probed);
    }
    throw BackendError(BackendErrorKind::Validation, "mock backend: unrecognized request shape");
}

std::string MockBackend::generate_stories(const CompletionRequest& request,
                                          const std::string& last_user) const {
    std::string lower = to_lower_ascii(last_user);

    int batch = 24;
    {
        static const std::regex re("create\\s+(\\d+)\\s+different stories");
        std::smatch m;
        if (std::regex_search(lower, m, re)) batch = std::stoi(m[1].str());
    }
    std::string occupation;
    {
        static const std::regex re("work(?:ing)? in ([^.\\n]+)\\.", std::regex::icase);
        std::smatch m;
        if (std::regex_search(last_user, m, re)) occupation = trim(m[1].str());
    }

    std::array<double, 2> gw = script_.gender_weights;
    std::array<double, 4> ew = script_.ethnicity_weights;
    if (lower.find("take into consideration") != std::string::npos) {
        if (script_.bame_gender_weights) gw = *script_.bame_gender_weights;
        if (script_.bame_ethnicity_weights) ew = *script_.bame_ethnicity_weights;
    } else if (lower.find("equal and balanced") != std::string::npos) {
        if (script_.baseline_gender_weights) gw = *script_.baseline_gender_weights;
        if (script_.baseline_ethnicity_weights) ew = *script_.baseline_ethnicity_weights;
    }

    std::array<int, 8> counts = apportion_cells(batch, gw, ew);
    std::vector<size_t> cells;
    for (size_t c = 0; c < 8; ++c) {
        for (int k = 0; k < counts[c]; ++k) cells.push_back(c);
    }

    std::mt19937_64 rng(request_seed(script_.seed, request));
    for (size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[pick(rng, i)]);

    std::array<size_t, 8> name_offset{};
    std::array<size_t, 8> instance{};
    for (size_t c = 0; c < 8; ++c) name_offset[c] = pick(rng, 6);

    std::string out;
    for (size_t s = 0; s < cells.size(); ++s) {
        size_t cell = cells[s];
        size_t eth = cell / 2;
        size_t gen = cell % 2;
        const std::vector<std::string>& pool = kNames[eth][gen];
        const std::string& name = pool[(name_offset[cell] + instance[cell]++) % pool.size()];
        const std::string& origin = kOrigins[eth][pick(rng, kOrigins[eth].size())];
        const std::string& gender_word = kGenderWords[gen][pick(rng, 2)];
        const std::string& body = kBodies[pick(rng, kBodies.size())];

        out += std::to_string(s + 1) + ". " + name + " (" + origin + " " + gender_word + "), " + body;
        if (!occupation.empty() && pick(rng, 3) == 0) {
            out += " We talked about what it takes to succeed in " + occupation + ".";
        }
        out.push_back('\n');
    }
    return out;
}

std::string MockBackend::explanation_reply(const std::string& last_user, bool probed) const {
    if (script_.superficial_explanation && !probed) {
        return "That distribution reflects patterns in training data.";
    }
    std::string lower = to_lower_ascii(last_user);
    auto [eth, eth_n] = top_category(lower, Axis::Ethnicity);
    auto [gen, gen_n] = top_category(lower, Axis::Gender);
    auto [inter, inter_n] = top_category(lower, Axis::Intersection);

    std::string out;
    out += "Looking at the batch, " + eth + " characters dominate with " + std::to_string(eth_n) +
           " of the classified total, and " + gen + " characters lead the gender split at " +
           std::to_string(gen_n) + ". ";
    out += "This line of work carries a strong " + eth +
           " association in the material the model learned from, and portrayal frequency translates "
           "directly into sampling frequency. ";
    out += "The association compounds at the intersection level, where " + inter + " stands out at " +
           std::to_string(inter_n) + ". ";
    out += "Career profiles, fiction, and news archives repeat the pairing, so unprompted generations "
           "reproduce it.";
    return out;
}

std::string MockBackend::probe_reply(const std::string& last_user) const {
    std::string lower = to_lower_ascii(last_user);
    std::string category = "that category";
    std::string count = "that many";
    size_t why = lower.find("why ");
    size_t appears = lower.find(" appears ", why == std::string::npos ? 0 : why);
    size_t times = lower.find(" times", appears == std::string::npos ? 0 : appears);
    if (why != std::string::npos && appears != std::string::npos && times != std::string::npos) {
        category = trim(last_user.substr(why + 4, appears - why - 4));
        count = trim(last_user.substr(appears + 9, times - appears - 9));
    }
    return category + " appears " + count +
           " times because the source material over-represents " + category +
           " professionals in this kind of role; those frequencies carry straight into generation "
           "probabilities unless the prompt counteracts them.";
}

std::string MockBackend::extraction_reply(const std::string& last_user) const {
    const MappingTable& table = MappingTable::builtin_default();
    const GenderLexicon& lexicon = GenderLexicon::builtin_default();

    std::string out;
    for (const NumberedItem& item : split_numbered_items(last_user)) {
        std::string gender = "unstated";
        std::string origin = "unstated";

        // parenthetical label first
        size_t open = item.text.find('(');
        while (open != std::string::npos) {
            size_t close = item.text.find(')', open + 1);
            if (close == std::string::npos) break;
            std::string inside = item.text.substr(open + 1, close - open - 1);
            std::vector<Token> tokens = tokenize(inside);
            if (!tokens.empty()) {
                if (auto g = lexicon.lookup(tokens.back().text)) {
                    gender = to_string(*g);
                    if (tokens.size() > 1) {
                        origin = trim(inside.substr(tokens.front().begin,
                                                    tokens[tokens.size() - 2].end - tokens.front().begin));
                    }
                    break;
                }
            }
            open = item.text.find('(', close + 1);
        }

        std::vector<Token> tokens = tokenize(item.text);
        if (gender == "unstated") {
            for (const Token& t : tokens) {
                if (auto g = lexicon.lookup(t.text)) {
                    gender = to_string(*g);
                    break;
                }
            }
        }
        if (origin == "unstated") {
            if (auto m = table.first_match(tokens)) {
                origin = trim(item.text.substr(tokens[m->token_begin].begin,
                                               tokens[m->token_begin + m->token_count - 1].end -
                                                   tokens[m->token_begin].begin));
            }
        }
        out += std::to_string(item.index) + ". gender: " + gender + "; origin: " + origin + "\n";
    }
    if (out.empty()) {
        throw BackendError(BackendErrorKind::Validation, "mock extraction: no stories in request");
    }
    return out;
}

std::string MockBackend::descriptor_reply(const std::string& last_user) const {
    // the story follows the prompt paragraph
    size_t start = last_user.find("\n\n");
    std::string story = start == std::string::npos ? last_user : last_user.substr(start + 2);
    std::string out;
    for (const Token& t : tokenize(story)) {
        if (t.text.size() >= 5 && (t.text.ends_with("ed") || t.text.ends_with("ing"))) {
            if (!out.empty()) out += ", ";
            out += t.text;
        }
    }
    return out.empty() ? "none" : out;
}

}  // namespace bame
