#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bame/backend.hpp"
#include "bame/extraction.hpp"
#include "bame/metrics.hpp"
#include "bame/stats.hpp"

namespace bame {

enum class Method { Vanilla, Baseline, Bame };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

class TemplateError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class PipelineError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Another process holds the run directory's writer lock.
class LockError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct PromptTemplate {
    std::string name;
    std::string text;
};

// Single-pass literal substitution of {placeholder} slots. Values are
// inserted verbatim (no escaping, no re-scanning). A {name} with no
// binding, or a binding whose value is empty, is an error; brace runs that
// don't look like a placeholder pass through untouched.
std::string render_prompt(const PromptTemplate& tmpl,
                          const std::map<std::string, std::string>& bindings);

// The five prompt templates of one audit run. Defaults carry the exact
// story-generation wordings the audit is built around (with the story
// count as a {batch_size} slot); they ship as editable files under
// runs/<id>/templates/.
struct PromptSet {
    PromptTemplate vanilla;
    PromptTemplate baseline;
    PromptTemplate bame;
    PromptTemplate explanation;
    PromptTemplate probe;

    static PromptSet defaults();
    // Reads <name>.txt for each template; files that don't exist keep the
    // default text.
    static PromptSet from_directory(const std::filesystem::path& dir);
    void write_to(const std::filesystem::path& dir) const;

    const PromptTemplate& for_method(Method m) const;
};

// The 25 occupational groups audited by default.
const std::vector<std::string>& default_occupations();

struct PipelineConfig {
    BackendConfig backend;
    std::vector<std::string> occupations = default_occupations();
    std::vector<Method> methods{Method::Vanilla, Method::Baseline, Method::Bame};
    int batch_size = 24;
    uint64_t seed = 0;
    int replicates = 1;
    bool extraction_agent = true;
    int min_explanation_chars = 200;
    std::vector<std::string> superficiality_patterns{"training data"};
    std::string templates_dir;

    static PipelineConfig from_json(const nlohmann::json& doc);
    nlohmann::ordered_json to_json() const;
};

// Sorted, deduplicated, canonical execution order (vanilla first so a
// later bame step can reuse its batch).
std::vector<Method> normalize_methods(std::vector<Method> methods);

struct ExplanationProbe {
    std::string category;
    int64_t count = 0;
    std::string question;
    std::string reply;
    bool operator==(const ExplanationProbe&) const = default;
};

struct ExplanationTrace {
    std::string initial_reply;
    bool superficial = false;  // initial reply tripped the probe round
    std::vector<ExplanationProbe> probes;
    std::string text;  // concatenated replies, injected into the bame prompt

    bool operator==(const ExplanationTrace& other) const {
        return initial_reply == other.initial_reply && superficial == other.superficial &&
               probes == other.probes && text == other.text;
    }
};

struct BatchRecord {
    std::string record_id;
    std::string run_id;
    std::string model;
    Method method = Method::Vanilla;
    std::string occupation;
    int replicate = 1;
    int batch_size = 24;
    bool shortfall = false;
    bool failed = false;
    std::string error;
    SamplingParams sampling;
    uint64_t seed = 0;
    std::vector<ChatMessage> prompts;  // full conversation, in send order
    std::string reply;                 // raw generation reply
    std::vector<std::string> stories;
    std::vector<RawExtraction> labels;
    BatchTally tally;
    bool extraction_agent = false;
    bool extraction_fallback = false;
    std::string extraction_fallback_reason;
    std::optional<ExplanationTrace> explanation;
    std::string source_record;  // vanilla record id a bame record grew from
    int64_t prompt_tokens = 0;
    int64_t completion_tokens = 0;
    std::string started_at;
    std::string finished_at;
    int64_t total_latency_ms = 0;

    bool operator==(const BatchRecord&) const = default;
};

nlohmann::ordered_json record_to_json(const BatchRecord& record);
BatchRecord record_from_json(const nlohmann::json& doc);

// "gender: female 13 (54.2%), male 11 (45.8%); ethnicity: ...;
// intersection: ...; excluded: 0" -- percentages over classified total.
std::string render_tally_text(const BatchTally& tally);

// Splits a generation reply into stories: numbered-list items first
// ("1." / "1)"), blank-line paragraphs otherwise.
std::vector<std::string> split_stories(const std::string& reply);

// One run directory: config.json + records/ + templates/. A writer holds
// .lock (created O_EXCL, removed on destruction); readers never lock.
class RunStore {
  public:
    static RunStore create(const std::filesystem::path& dir);
    static RunStore open_existing(const std::filesystem::path& dir);

    RunStore(RunStore&& other) noexcept;
    RunStore& operator=(RunStore&&) = delete;
    RunStore(const RunStore&) = delete;
    ~RunStore();

    const std::string& run_id() const { return run_id_; }
    const std::filesystem::path& root() const { return root_; }

    void write_config(const nlohmann::ordered_json& config) const;
    nlohmann::json load_config() const;
    void write_templates(const PromptSet& prompts) const;
    void write_record(const BatchRecord& record) const;
    std::filesystem::path record_path(const std::string& record_id) const;
    std::vector<BatchRecord> load_records() const;  // filename order

    static void write_file_atomic(const std::filesystem::path& path, std::string_view content);
    static std::string sanitize_component(std::string_view name);

  private:
    RunStore() = default;
    std::filesystem::path root_;
    std::string run_id_;
    bool locked_ = false;
};

struct RunOutcome {
    int records_written = 0;
    int failures = 0;
};

// Drives generate -> extract -> tally -> persist for every requested
// (occupation, method, replicate) cell, sequentially and in a fixed order
// so seeded runs are reproducible.
class Runner {
  public:
    Runner(const PipelineConfig& config, Backend& backend, RunStore& store,
           const MappingTable& table, const GenderLexicon& lexicon, const PromptSet& prompts,
           std::ostream* log = nullptr);

    // Vanilla or Baseline. Persists the record (flagged, not dropped, on
    // backend failure) and rethrows backend errors.
    BatchRecord run_method(Method method, const std::string& occupation, int replicate = 1);

    // Tally -> explanation conversation -> optional per-axis probes.
    ExplanationTrace elicit_explanation(const BatchRecord& vanilla_record);

    // Three-step loop; reuses `vanilla` when given, else generates one
    // (persisted too). Failures persist a flagged record naming the step.
    BatchRecord run_bame(const std::string& occupation, int replicate = 1,
                         const BatchRecord* vanilla = nullptr);

    RunOutcome run_all();

  private:
    const PipelineConfig& config_;
    Backend& backend_;
    RunStore& store_;
    const MappingTable& table_;
    const GenderLexicon& lexicon_;
    const PromptSet& prompts_;
    std::ostream* log_;

    std::string record_id(Method method, const std::string& occupation, int replicate) const;
    std::string request_tag(Method method, const std::string& occupation, int replicate) const;
    BatchRecord make_skeleton(Method method, const std::string& occupation, int replicate) const;
    void finish_generation(BatchRecord& record, const CompletionResponse& response);
    CompletionResponse call(BatchRecord& record, const std::vector<ChatMessage>& messages,
                            const std::string& tag);
    ExplanationTrace elicit_explanation_into(BatchRecord& sink, const BatchRecord& vanilla_record);
    bool is_superficial(const std::string& reply) const;
};

struct ReplicateResult {
    std::vector<BatchRecord> records;
    // pooled per-category Wilson CIs, indexed by axis
    std::vector<ProportionCI> gender_ci;
    std::vector<ProportionCI> ethnicity_ci;
    std::vector<ProportionCI> intersection_ci;
};

// Repeated generations of one (method, occupation) cell with pooled
// confidence intervals. repetitions must be >= 2.
ReplicateResult replicate(Runner& runner, Method method, const std::string& occupation,
                          int repetitions, double level = 0.95);

}  // namespace bame
