#include "bame/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include "bame/text_util.hpp"

namespace bame {
namespace {

std::string now_iso() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

nlohmann::ordered_json params_to_json(const SamplingParams& p) {
    nlohmann::ordered_json out;
    out["temperature"] = p.temperature;
    out["top_k"] = p.top_k ? nlohmann::ordered_json(*p.top_k) : nlohmann::ordered_json(nullptr);
    out["top_p"] = p.top_p;
    out["max_tokens"] =
        p.max_tokens ? nlohmann::ordered_json(*p.max_tokens) : nlohmann::ordered_json(nullptr);
    return out;
}

SamplingParams params_from_json(const nlohmann::json& node) {
    SamplingParams p;
    p.temperature = node.at("temperature").get<double>();
    if (node.at("top_k").is_null()) p.top_k.reset();
    else p.top_k = node.at("top_k").get<int>();
    p.top_p = node.at("top_p").get<double>();
    if (node.at("max_tokens").is_null()) p.max_tokens.reset();
    else p.max_tokens = node.at("max_tokens").get<int>();
    return p;
}

nlohmann::ordered_json tally_to_json(const BatchTally& t) {
    nlohmann::ordered_json out;
    out["occupation"] = t.occupation;
    for (Axis axis : {Axis::Gender, Axis::Ethnicity, Axis::Intersection}) {
        nlohmann::ordered_json counts;
        const std::vector<std::string>& names = axis_categories(axis);
        for (size_t i = 0; i < names.size(); ++i) counts[names[i]] = t.count(axis, i);
        out[std::string(to_string(axis))] = std::move(counts);
    }
    out["excluded"] = t.excluded;
    return out;
}

BatchTally tally_from_json(const nlohmann::json& node) {
    BatchTally t;
    t.occupation = node.at("occupation").get<std::string>();
    const std::vector<std::string>& g = axis_categories(Axis::Gender);
    for (size_t i = 0; i < 2; ++i) t.gender[i] = node.at("gender").at(g[i]).get<int64_t>();
    const std::vector<std::string>& e = axis_categories(Axis::Ethnicity);
    for (size_t i = 0; i < 4; ++i) t.ethnicity[i] = node.at("ethnicity").at(e[i]).get<int64_t>();
    const std::vector<std::string>& x = axis_categories(Axis::Intersection);
    for (size_t i = 0; i < 8; ++i) t.intersection[i] = node.at("intersection").at(x[i]).get<int64_t>();
    t.excluded = node.at("excluded").get<int64_t>();
    return t;
}

nlohmann::ordered_json label_to_json(const RawExtraction& x) {
    nlohmann::ordered_json out;
    out["story_index"] = x.story_index;
    out["gender_text"] =
        x.gender_text ? nlohmann::ordered_json(*x.gender_text) : nlohmann::ordered_json(nullptr);
    out["origin_text"] =
        x.origin_text ? nlohmann::ordered_json(*x.origin_text) : nlohmann::ordered_json(nullptr);
    out["source"] = std::string(to_string(x.source));
    nlohmann::ordered_json resolved;
    resolved["gender"] = std::string(to_string(x.resolved.gender));
    resolved["origin"] = x.resolved.origin_text;
    resolved["ethnicity"] = std::string(to_string(x.resolved.ethnicity));
    out["resolved"] = std::move(resolved);
    return out;
}

RawExtraction label_from_json(const nlohmann::json& node) {
    RawExtraction x;
    x.story_index = node.at("story_index").get<int>();
    if (!node.at("gender_text").is_null()) x.gender_text = node.at("gender_text").get<std::string>();
    if (!node.at("origin_text").is_null()) x.origin_text = node.at("origin_text").get<std::string>();
    x.source = node.at("source").get<std::string>() == "agent" ? LabelSource::Agent
                                                               : LabelSource::RuleBased;
    const nlohmann::json& r = node.at("resolved");
    x.resolved.gender = gender_from_string(r.at("gender").get<std::string>());
    x.resolved.origin_text = r.at("origin").get<std::string>();
    x.resolved.ethnicity = ethnicity_from_string(r.at("ethnicity").get<std::string>());
    return x;
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "assistant") return Role::Assistant;
    return Role::User;
}

bool contains_word(const std::string& lower, const std::string& term) {
    size_t pos = 0;
    while ((pos = lower.find(term, pos)) != std::string::npos) {
        char prev = pos == 0 ? ' ' : lower[pos - 1];
        char next = pos + term.size() < lower.size() ? lower[pos + term.size()] : ' ';
        bool prev_ok = !(std::isalnum(static_cast<unsigned char>(prev)) || prev == '_');
        bool next_ok = !(std::isalnum(static_cast<unsigned char>(next)) || next == '_');
        if (prev_ok && next_ok) return true;
        pos += term.size();
    }
    return false;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    PipelineConfig cfg;
    if (doc.contains("backend")) cfg.backend = parse_backend_config(doc.at("backend"));
    if (doc.contains("occupations")) {
        cfg.occupations.clear();
        for (const nlohmann::json& v : doc.at("occupations")) {
            std::string name = v.get<std::string>();
            if (trim(name).empty()) throw ConfigError("config: empty occupation name");
            cfg.occupations.push_back(std::move(name));
        }
        if (cfg.occupations.empty()) throw ConfigError("config: occupations list is empty");
    }
    if (doc.contains("methods")) {
        std::vector<Method> methods;
        for (const nlohmann::json& v : doc.at("methods")) {
            methods.push_back(method_from_string(v.get<std::string>()));
        }
        cfg.methods = normalize_methods(std::move(methods));
        if (cfg.methods.empty()) throw ConfigError("config: methods list is empty");
    }
    if (doc.contains("batch_size")) cfg.batch_size = doc.at("batch_size").get<int>();
    if (cfg.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (doc.contains("seed")) {
        cfg.seed = doc.at("seed").get<uint64_t>();
        cfg.backend.mock.seed = cfg.seed;
    } else {
        cfg.seed = cfg.backend.mock.seed;
    }
    if (doc.contains("replicates")) cfg.replicates = doc.at("replicates").get<int>();
    if (cfg.replicates < 1) throw ConfigError("config: replicates must be >= 1");
    if (doc.contains("extraction_agent")) cfg.extraction_agent = doc.at("extraction_agent").get<bool>();
    if (doc.contains("min_explanation_chars")) {
        cfg.min_explanation_chars = doc.at("min_explanation_chars").get<int>();
        if (cfg.min_explanation_chars < 0) throw ConfigError("config: min_explanation_chars must be >= 0");
    }
    if (doc.contains("superficiality_patterns")) {
        cfg.superficiality_patterns.clear();
        for (const nlohmann::json& v : doc.at("superficiality_patterns")) {
            cfg.superficiality_patterns.push_back(v.get<std::string>());
        }
    }
    if (doc.contains("templates_dir")) cfg.templates_dir = doc.at("templates_dir").get<std::string>();
    return cfg;
}

nlohmann::ordered_json PipelineConfig::to_json() const {
    nlohmann::ordered_json out;
    nlohmann::ordered_json be;
    switch (backend.kind) {
        case BackendKind::Mock: be["kind"] = "mock"; break;
        case BackendKind::OpenAiCompatible: be["kind"] = "openai_compatible"; break;
        case BackendKind::AnthropicCompatible: be["kind"] = "anthropic_compatible"; break;
    }
    be["endpoint"] = backend.endpoint;
    be["model"] = backend.model;
    be["auth_env"] = backend.auth_env;
    be["params"] = params_to_json(backend.params);
    be["max_in_flight"] = backend.limits.max_in_flight;
    be["requests_per_second"] = backend.limits.requests_per_second
                                    ? nlohmann::ordered_json(*backend.limits.requests_per_second)
                                    : nlohmann::ordered_json(nullptr);
    be["retry"] = {{"max_attempts", backend.limits.retry.max_attempts},
                   {"backoff_ms", backend.limits.retry.base_backoff.count()}};
    be["http_timeout_ms"] = backend.http_timeout.count();
    if (backend.kind == BackendKind::Mock) {
        nlohmann::ordered_json mock;
        mock["seed"] = backend.mock.seed;
        auto weights2 = [](const std::array<double, 2>& w) {
            return nlohmann::ordered_json{{"female", w[0]}, {"male", w[1]}};
        };
        auto weights4 = [](const std::array<double, 4>& w) {
            return nlohmann::ordered_json{
                {"european", w[0]}, {"african", w[1]}, {"api", w[2]}, {"hispanic_latino", w[3]}};
        };
        mock["gender_weights"] = weights2(backend.mock.gender_weights);
        mock["ethnicity_weights"] = weights4(backend.mock.ethnicity_weights);
        if (backend.mock.baseline_gender_weights) {
            mock["baseline_gender_weights"] = weights2(*backend.mock.baseline_gender_weights);
        }
        if (backend.mock.baseline_ethnicity_weights) {
            mock["baseline_ethnicity_weights"] = weights4(*backend.mock.baseline_ethnicity_weights);
        }
        if (backend.mock.bame_gender_weights) {
            mock["bame_gender_weights"] = weights2(*backend.mock.bame_gender_weights);
        }
        if (backend.mock.bame_ethnicity_weights) {
            mock["bame_ethnicity_weights"] = weights4(*backend.mock.bame_ethnicity_weights);
        }
        mock["superficial_explanation"] = backend.mock.superficial_explanation;
        if (!backend.mock.replay.empty()) {
            nlohmann::ordered_json replay;
            for (const auto& [k, v] : backend.mock.replay) replay[k] = v;
            mock["replay"] = std::move(replay);
        }
        be["mock"] = std::move(mock);
    }
    out["backend"] = std::move(be);
    out["occupations"] = occupations;
    nlohmann::ordered_json methods_json = nlohmann::ordered_json::array();
    for (Method m : methods) methods_json.push_back(std::string(to_string(m)));
    out["methods"] = std::move(methods_json);
    out["batch_size"] = batch_size;
    out["seed"] = seed;
    out["replicates"] = replicates;
    out["extraction_agent"] = extraction_agent;
    out["min_explanation_chars"] = min_explanation_chars;
    out["superficiality_patterns"] = superficiality_patterns;
    out["templates_dir"] = templates_dir;
    return out;
}

nlohmann::ordered_json record_to_json(const BatchRecord& record) {
    nlohmann::ordered_json out;
    out["record_id"] = record.record_id;
    out["run_id"] = record.run_id;
    out["model"] = record.model;
    out["method"] = std::string(to_string(record.method));
    out["occupation"] = record.occupation;
    out["replicate"] = record.replicate;
    out["batch_size"] = record.batch_size;
    out["shortfall"] = record.shortfall;
    out["failed"] = record.failed;
    out["error"] = record.error;
    out["sampling"] = params_to_json(record.sampling);
    out["seed"] = record.seed;
    nlohmann::ordered_json prompts = nlohmann::ordered_json::array();
    for (const ChatMessage& m : record.prompts) {
        prompts.push_back({{"role", std::string(to_string(m.role))}, {"text", m.text}});
    }
    out["prompts"] = std::move(prompts);
    out["reply"] = record.reply;
    out["stories"] = record.stories;
    nlohmann::ordered_json labels = nlohmann::ordered_json::array();
    for (const RawExtraction& x : record.labels) labels.push_back(label_to_json(x));
    out["labels"] = std::move(labels);
    out["tally"] = tally_to_json(record.tally);
    out["extraction"] = {{"agent", record.extraction_agent},
                         {"fallback", record.extraction_fallback},
                         {"reason", record.extraction_fallback_reason}};
    if (record.explanation) {
        nlohmann::ordered_json ex;
        ex["initial_reply"] = record.explanation->initial_reply;
        ex["superficial"] = record.explanation->superficial;
        nlohmann::ordered_json probes = nlohmann::ordered_json::array();
        for (const ExplanationProbe& p : record.explanation->probes) {
            probes.push_back({{"category", p.category},
                              {"count", p.count},
                              {"question", p.question},
                              {"reply", p.reply}});
        }
        ex["probes"] = std::move(probes);
        ex["text"] = record.explanation->text;
        out["explanation"] = std::move(ex);
    } else {
        out["explanation"] = nullptr;
    }
    out["source_record"] = record.source_record;
    out["usage"] = {{"prompt_tokens", record.prompt_tokens},
                    {"completion_tokens", record.completion_tokens}};
    out["timestamps"] = {{"started", record.started_at},
                         {"finished", record.finished_at},
                         {"total_latency_ms", record.total_latency_ms}};
    return out;
}

BatchRecord record_from_json(const nlohmann::json& doc) {
    BatchRecord r;
    r.record_id = doc.at("record_id").get<std::string>();
    r.run_id = doc.at("run_id").get<std::string>();
    r.model = doc.at("model").get<std::string>();
    r.method = method_from_string(doc.at("method").get<std::string>());
    r.occupation = doc.at("occupation").get<std::string>();
    r.replicate = doc.at("replicate").get<int>();
    r.batch_size = doc.at("batch_size").get<int>();
    r.shortfall = doc.at("shortfall").get<bool>();
    r.failed = doc.at("failed").get<bool>();
    r.error = doc.at("error").get<std::string>();
    r.sampling = params_from_json(doc.at("sampling"));
    r.seed = doc.at("seed").get<uint64_t>();
    for (const nlohmann::json& m : doc.at("prompts")) {
        r.prompts.push_back(
            {role_from_string(m.at("role").get<std::string>()), m.at("text").get<std::string>()});
    }
    r.reply = doc.at("reply").get<std::string>();
    r.stories = doc.at("stories").get<std::vector<std::string>>();
    for (const nlohmann::json& x : doc.at("labels")) r.labels.push_back(label_from_json(x));
    r.tally = tally_from_json(doc.at("tally"));
    const nlohmann::json& ex = doc.at("extraction");
    r.extraction_agent = ex.at("agent").get<bool>();
    r.extraction_fallback = ex.at("fallback").get<bool>();
    r.extraction_fallback_reason = ex.at("reason").get<std::string>();
    if (!doc.at("explanation").is_null()) {
        const nlohmann::json& e = doc.at("explanation");
        ExplanationTrace trace;
        trace.initial_reply = e.at("initial_reply").get<std::string>();
        trace.superficial = e.at("superficial").get<bool>();
        for (const nlohmann::json& p : e.at("probes")) {
            trace.probes.push_back({p.at("category").get<std::string>(), p.at("count").get<int64_t>(),
                                    p.at("question").get<std::string>(),
                                    p.at("reply").get<std::string>()});
        }
        trace.text = e.at("text").get<std::string>();
        r.explanation = std::move(trace);
    }
    r.source_record = doc.at("source_record").get<std::string>();
    r.prompt_tokens = doc.at("usage").at("prompt_tokens").get<int64_t>();
    r.completion_tokens = doc.at("usage").at("completion_tokens").get<int64_t>();
    r.started_at = doc.at("timestamps").at("started").get<std::string>();
    r.finished_at = doc.at("timestamps").at("finished").get<std::string>();
    r.total_latency_ms = doc.at("timestamps").at("total_latency_ms").get<int64_t>();
    return r;
}

std::string render_tally_text(const BatchTally& tally) {
    int64_t total = tally.total_classified();
    auto pct = [&](int64_t c) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f", total > 0 ? 100.0 * static_cast<double>(c) /
                                                                static_cast<double>(total)
                                                          : 0.0);
        return std::string(buf);
    };
    std::string out;
    for (Axis axis : {Axis::Gender, Axis::Ethnicity, Axis::Intersection}) {
        out += to_string(axis);
        out += ": ";
        const std::vector<std::string>& names = axis_categories(axis);
        for (size_t i = 0; i < names.size(); ++i) {
            if (i > 0) out += ", ";
            out += names[i] + " " + std::to_string(tally.count(axis, i)) + " (" +
                   pct(tally.count(axis, i)) + "%)";
        }
        out += "; ";
    }
    out += "excluded: " + std::to_string(tally.excluded);
    return out;
}

std::vector<std::string> split_stories(const std::string& reply) {
    std::vector<std::string> items;
    bool in_item = false;
    std::string current;
    auto flush = [&] {
        if (in_item && !trim(current).empty()) items.push_back(std::string(trim(current)));
        current.clear();
    };
    size_t pos = 0;
    while (pos <= reply.size()) {
        size_t eol = reply.find('\n', pos);
        std::string line =
            reply.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        pos = eol == std::string::npos ? reply.size() + 1 : eol + 1;
        std::string t(trim(line));
        size_t d = 0;
        while (d < t.size() && std::isdigit(static_cast<unsigned char>(t[d]))) ++d;
        if (d > 0 && d < t.size() && (t[d] == '.' || t[d] == ')')) {
            flush();
            in_item = true;
            current = trim(t.substr(d + 1));
        } else if (in_item && !t.empty()) {
            current += " ";
            current += t;
        }
    }
    flush();
    if (!items.empty()) return items;

    // no numbered list; fall back to blank-line paragraphs
    std::string paragraph;
    pos = 0;
    auto flush_para = [&] {
        if (!trim(paragraph).empty()) items.push_back(std::string(trim(paragraph)));
        paragraph.clear();
    };
    while (pos <= reply.size()) {
        size_t eol = reply.find('\n', pos);
        std::string line =
            reply.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        pos = eol == std::string::npos ? reply.size() + 1 : eol + 1;
        std::string t(trim(line));
        if (t.empty()) {
            flush_para();
        } else {
            if (!paragraph.empty()) paragraph += " ";
            paragraph += t;
        }
    }
    flush_para();
    return items;
}

RunStore RunStore::create(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::filesystem::path lock = dir / ".lock";
    int fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST) {
            throw LockError("run directory " + dir.string() +
                            " is locked by another writer (remove .lock if that run is dead)");
        }
        throw PipelineError("cannot create " + lock.string() + ": " + std::strerror(errno));
    }
    std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd, pid.data(), pid.size());
    (void)n;
    ::close(fd);

    RunStore store;
    store.root_ = dir;
    store.locked_ = true;
    std::filesystem::path normal = std::filesystem::absolute(dir).lexically_normal();
    if (normal.filename().empty()) normal = normal.parent_path();
    store.run_id_ = normal.filename().string();
    std::filesystem::create_directories(dir / "records");
    return store;
}

RunStore RunStore::open_existing(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir / "records")) {
        throw PipelineError(dir.string() + " is not a run directory (no records/)");
    }
    RunStore store;
    store.root_ = dir;
    store.locked_ = false;
    std::filesystem::path normal = std::filesystem::absolute(dir).lexically_normal();
    if (normal.filename().empty()) normal = normal.parent_path();
    store.run_id_ = normal.filename().string();
    return store;
}

RunStore::RunStore(RunStore&& other) noexcept
    : root_(std::move(other.root_)), run_id_(std::move(other.run_id_)), locked_(other.locked_) {
    other.locked_ = false;
}

RunStore::~RunStore() {
    if (locked_) {
        std::error_code ec;
        std::filesystem::remove(root_ / ".lock", ec);
    }
}

void RunStore::write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw PipelineError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw PipelineError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string RunStore::sanitize_component(std::string_view name) {
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
        out.push_back(ok ? c : '_');
    }
    if (out.empty()) out = "x";
    return out;
}

void RunStore::write_config(const nlohmann::ordered_json& config) const {
    write_file_atomic(root_ / "config.json", config.dump(2) + "\n");
}

nlohmann::json RunStore::load_config() const {
    return nlohmann::json::parse(read_file(root_ / "config.json"));
}

void RunStore::write_templates(const PromptSet& prompts) const {
    prompts.write_to(root_ / "templates");
}

std::filesystem::path RunStore::record_path(const std::string& record_id) const {
    return root_ / "records" / (sanitize_component(record_id) + ".json");
}

void RunStore::write_record(const BatchRecord& record) const {
    write_file_atomic(record_path(record.record_id), record_to_json(record).dump(2) + "\n");
}

std::vector<BatchRecord> RunStore::load_records() const {
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::directory_iterator(root_ / "records")) {
        if (entry.path().extension() == ".json") paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    std::vector<BatchRecord> records;
    for (const std::filesystem::path& p : paths) {
        try {
            records.push_back(record_from_json(nlohmann::json::parse(read_file(p))));
        } catch (const nlohmann::json::exception& e) {
            throw PipelineError("malformed record " + p.string() + ": " + e.what());
        }
    }
    return records;
}

Runner::Runner(const PipelineConfig& config, Backend& backend, RunStore& store,
               const MappingTable& table, const GenderLexicon& lexicon, const PromptSet& prompts,
               std::ostream* log)
    : config_(config),
      backend_(backend),
      store_(store),
      table_(table),
      lexicon_(lexicon),
      prompts_(prompts),
      log_(log) {}

std::string Runner::record_id(Method method, const std::string& occupation, int replicate) const {
    std::string id = backend_.model() + "__" + std::string(to_string(method)) + "__" + occupation;
    if (replicate > 1) id += "__rep" + std::to_string(replicate);
    return id;
}

std::string Runner::request_tag(Method method, const std::string& occupation, int replicate) const {
    std::string tag = std::string(to_string(method)) + ":" + occupation;
    if (replicate > 1) tag += "#rep" + std::to_string(replicate);
    return tag;
}

BatchRecord Runner::make_skeleton(Method method, const std::string& occupation, int replicate) const {
    BatchRecord record;
    record.record_id = record_id(method, occupation, replicate);
    record.run_id = store_.run_id();
    record.model = backend_.model();
    record.method = method;
    record.occupation = occupation;
    record.replicate = replicate;
    record.batch_size = config_.batch_size;
    record.sampling = config_.backend.params;
    record.seed = config_.seed;
    record.started_at = now_iso();
    return record;
}

CompletionResponse Runner::call(BatchRecord& record, const std::vector<ChatMessage>& messages,
                                const std::string& tag) {
    CompletionRequest request;
    request.model = backend_.model();
    request.messages = messages;
    request.params = config_.backend.params;
    request.request_tag = tag;
    CompletionResponse response = backend_.complete(request);
    if (response.usage) {
        record.prompt_tokens += response.usage->prompt_tokens;
        record.completion_tokens += response.usage->completion_tokens;
    }
    record.total_latency_ms += response.latency.count();
    return response;
}

void Runner::finish_generation(BatchRecord& record, const CompletionResponse& response) {
    record.reply = response.text;
    std::vector<std::string> stories = split_stories(response.text);
    if (static_cast<int>(stories.size()) > record.batch_size) {
        stories.resize(static_cast<size_t>(record.batch_size));
    }
    record.stories = std::move(stories);
    record.shortfall = static_cast<int>(record.stories.size()) < record.batch_size;
    if (log_ && record.shortfall) {
        *log_ << "warning: " << record.record_id << " produced " << record.stories.size() << " of "
              << record.batch_size << " stories"
              << (record.stories.size() * 2 < static_cast<size_t>(record.batch_size)
                      ? " (less than half the batch)"
                      : "")
              << "\n";
    }

    if (record.stories.empty()) {
        record.tally = BatchTally{};
        record.tally.occupation = record.occupation;
        return;
    }
    if (config_.extraction_agent) {
        record.extraction_agent = true;
        ExtractionOutcome outcome = extract_labels(record.stories, backend_, table_, lexicon_);
        record.labels = std::move(outcome.extractions);
        record.extraction_fallback = outcome.used_fallback;
        record.extraction_fallback_reason = outcome.fallback_reason;
        if (log_ && outcome.used_fallback) {
            *log_ << "note: " << record.record_id << " used rule-based extraction fallback: "
                  << record.extraction_fallback_reason << "\n";
        }
    } else {
        record.labels = extract_labels_rule_based(record.stories, table_, lexicon_);
    }
    std::vector<DemographicLabel> resolved;
    resolved.reserve(record.labels.size());
    for (const RawExtraction& x : record.labels) resolved.push_back(x.resolved);
    record.tally = tally_batch(resolved, record.occupation);
}

BatchRecord Runner::run_method(Method method, const std::string& occupation, int replicate) {
    if (method == Method::Bame) {
        throw std::invalid_argument("run_method drives vanilla/baseline only; use run_bame");
    }
    BatchRecord record = make_skeleton(method, occupation, replicate);
    std::map<std::string, std::string> bindings{{"batch_size", std::to_string(config_.batch_size)},
                                                {"occupation", occupation}};
    record.prompts = {{Role::User, render_prompt(prompts_.for_method(method), bindings)}};
    try {
        CompletionResponse response =
            call(record, record.prompts, request_tag(method, occupation, replicate));
        finish_generation(record, response);
    } catch (const BackendError& e) {
        record.failed = true;
        record.error = std::string(to_string(e.kind())) + ": " + e.what();
        record.finished_at = now_iso();
        store_.write_record(record);
        throw;
    }
    record.finished_at = now_iso();
    store_.write_record(record);
    if (log_) {
        *log_ << record.record_id << ": " << record.stories.size() << " stories, "
              << record.tally.total_classified() << " classified, " << record.tally.excluded
              << " excluded\n";
    }
    return record;
}

ExplanationTrace Runner::elicit_explanation(const BatchRecord& vanilla_record) {
    if (vanilla_record.prompts.empty() || vanilla_record.tally.total_stories() == 0) {
        throw PipelineError("explanation elicitation needs a vanilla record with prompts and a tally");
    }
    BatchRecord scratch;  // usage sink when called standalone
    return elicit_explanation_into(scratch, vanilla_record);
}

ExplanationTrace Runner::elicit_explanation_into(BatchRecord& sink,
                                                 const BatchRecord& vanilla_record) {
    std::vector<ChatMessage> conversation;
    conversation.push_back(vanilla_record.prompts.front());
    conversation.push_back({Role::Assistant, vanilla_record.reply});
    std::string tally_text = render_tally_text(vanilla_record.tally);
    conversation.push_back(
        {Role::User, render_prompt(prompts_.explanation, {{"tally", tally_text}})});

    std::string tag = "explain:" + vanilla_record.occupation;
    if (vanilla_record.replicate > 1) tag += "#rep" + std::to_string(vanilla_record.replicate);

    ExplanationTrace trace;
    trace.initial_reply = call(sink, conversation, tag).text;

    bool shallow = static_cast<int>(trace.initial_reply.size()) < config_.min_explanation_chars ||
                   is_superficial(trace.initial_reply);
    trace.superficial = shallow;
    if (shallow) {
        // an empty reply stays out of the conversation: requests reject empty turns
        if (!trace.initial_reply.empty()) {
            conversation.push_back({Role::Assistant, trace.initial_reply});
        }
        for (Axis axis : {Axis::Gender, Axis::Ethnicity, Axis::Intersection}) {
            const std::vector<std::string>& names = axis_categories(axis);
            size_t top = 0;
            for (size_t i = 1; i < names.size(); ++i) {
                if (vanilla_record.tally.count(axis, i) > vanilla_record.tally.count(axis, top)) {
                    top = i;
                }
            }
            ExplanationProbe probe;
            probe.category = names[top];
            probe.count = vanilla_record.tally.count(axis, top);
            probe.question = render_prompt(
                prompts_.probe,
                {{"category", probe.category}, {"count", std::to_string(probe.count)}});
            conversation.push_back({Role::User, probe.question});
            probe.reply =
                call(sink, conversation, tag + "!" + std::string(to_string(axis))).text;
            if (!probe.reply.empty()) conversation.push_back({Role::Assistant, probe.reply});
            trace.probes.push_back(std::move(probe));
        }
    }

    std::string text = trim(trace.initial_reply);
    for (const ExplanationProbe& p : trace.probes) {
        std::string reply(trim(p.reply));
        if (reply.empty()) continue;
        if (!text.empty()) text += " ";
        text += reply;
    }
    if (text.empty()) {
        throw PipelineError("explanation elicitation failed: model returned empty replies for " +
                            vanilla_record.record_id);
    }
    trace.text = std::move(text);
    return trace;
}

bool Runner::is_superficial(const std::string& reply) const {
    std::string lower = to_lower_ascii(reply);
    bool matched = false;
    for (const std::string& pattern : config_.superficiality_patterns) {
        if (!pattern.empty() && lower.find(to_lower_ascii(pattern)) != std::string::npos) {
            matched = true;
            break;
        }
    }
    if (!matched) return false;
    for (Axis axis : {Axis::Gender, Axis::Ethnicity, Axis::Intersection}) {
        for (const std::string& name : axis_categories(axis)) {
            if (contains_word(lower, name)) return false;
            std::string spaced = name;
            std::replace(spaced.begin(), spaced.end(), '_', ' ');
            if (spaced != name && contains_word(lower, spaced)) return false;
        }
    }
    return true;
}

BatchRecord Runner::run_bame(const std::string& occupation, int replicate,
                             const BatchRecord* vanilla) {
    BatchRecord record = make_skeleton(Method::Bame, occupation, replicate);
    std::string step = "vanilla generation";
    BatchRecord generated;
    try {
        if (vanilla == nullptr) {
            generated = run_method(Method::Vanilla, occupation, replicate);
            vanilla = &generated;
        }
        step = "explanation elicitation";
        ExplanationTrace trace = elicit_explanation_into(record, *vanilla);
        record.explanation = trace;
        record.source_record = vanilla->record_id;

        step = "regeneration";
        std::vector<ChatMessage> conversation;
        conversation.push_back(vanilla->prompts.front());
        conversation.push_back({Role::Assistant, vanilla->reply});
        conversation.push_back(
            {Role::User,
             render_prompt(prompts_.explanation, {{"tally", render_tally_text(vanilla->tally)}})});
        conversation.push_back({Role::Assistant, trace.initial_reply});
        for (const ExplanationProbe& p : trace.probes) {
            conversation.push_back({Role::User, p.question});
            conversation.push_back({Role::Assistant, p.reply});
        }
        conversation.push_back(
            {Role::User, render_prompt(prompts_.bame,
                                       {{"batch_size", std::to_string(config_.batch_size)},
                                        {"occupation", occupation},
                                        {"explanation", trace.text}})});
        record.prompts = conversation;

        CompletionResponse response =
            call(record, conversation, request_tag(Method::Bame, occupation, replicate));
        finish_generation(record, response);
    } catch (const BackendError& e) {
        record.failed = true;
        record.error = step + ": " + std::string(to_string(e.kind())) + ": " + e.what();
        record.finished_at = now_iso();
        store_.write_record(record);
        throw PipelineError(record.record_id + " failed at " + record.error);
    } catch (const PipelineError& e) {
        record.failed = true;
        record.error = step + ": " + e.what();
        record.finished_at = now_iso();
        store_.write_record(record);
        throw;
    }
    record.finished_at = now_iso();
    store_.write_record(record);
    if (log_) {
        *log_ << record.record_id << ": " << record.stories.size() << " stories, "
              << record.tally.total_classified() << " classified, " << record.tally.excluded
              << " excluded\n";
    }
    return record;
}

RunOutcome Runner::run_all() {
    store_.write_config(config_.to_json());
    store_.write_templates(prompts_);
    std::vector<Method> methods = normalize_methods(config_.methods);
    RunOutcome outcome;
    for (const std::string& occupation : config_.occupations) {
        for (int rep = 1; rep <= config_.replicates; ++rep) {
            BatchRecord vanilla_record;
            bool have_vanilla = false;
            for (Method method : methods) {
                try {
                    if (method == Method::Vanilla) {
                        vanilla_record = run_method(Method::Vanilla, occupation, rep);
                        have_vanilla = true;
                    } else if (method == Method::Baseline) {
                        run_method(Method::Baseline, occupation, rep);
                    } else {
                        run_bame(occupation, rep, have_vanilla ? &vanilla_record : nullptr);
                    }
                    ++outcome.records_written;
                } catch (const std::exception& e) {
                    ++outcome.failures;
                    if (log_) {
                        *log_ << "error: " << to_string(method) << " / " << occupation << ": "
                              << e.what() << "\n";
                    }
                }
            }
        }
    }
    return outcome;
}

ReplicateResult replicate(Runner& runner, Method method, const std::string& occupation,
                          int repetitions, double level) {
    if (repetitions < 2) throw std::invalid_argument("replicate requires repetitions >= 2");
    ReplicateResult result;
    std::vector<BatchTally> tallies;
    for (int rep = 1; rep <= repetitions; ++rep) {
        BatchRecord record = method == Method::Bame ? runner.run_bame(occupation, rep)
                                                    : runner.run_method(method, occupation, rep);
        tallies.push_back(record.tally);
        result.records.push_back(std::move(record));
    }
    BatchTally pooled = sum_tallies(tallies);
    int64_t total = pooled.total_classified();
    if (total == 0) {
        throw PipelineError("replicate: no classified characters pooled over " +
                            std::to_string(repetitions) + " repetitions");
    }
    auto fill = [&](Axis axis, std::vector<ProportionCI>& out) {
        for (size_t i = 0; i < axis_size(axis); ++i) {
            out.push_back(proportion_ci(pooled.count(axis, i), total, level));
        }
    };
    fill(Axis::Gender, result.gender_ci);
    fill(Axis::Ethnicity, result.ethnicity_ci);
    fill(Axis::Intersection, result.intersection_ci);
    return result;
}

}  // namespace bame
