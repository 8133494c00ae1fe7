#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bame/pipeline.hpp"

namespace bame {

// Aggregated metrics for one (model, method) slice of a run. Pooled values
// weight every classified character equally; per-occupation values sum a
// given occupation's replicates first.
struct MethodReport {
    std::string model;
    Method method = Method::Vanilla;
    std::vector<std::string> record_ids;
    BatchTally pooled;
    std::vector<BatchTally> per_occupation;
    std::optional<Distribution> gender_distribution;
    std::optional<Distribution> ethnicity_distribution;
    RepresentationSummary representation;
    std::vector<std::pair<std::string, Distribution>> ethnicity_by_occupation;
    std::vector<std::pair<std::string, double>> tvd_by_occupation;
    std::optional<double> ethnicity_tvd_mean;    // mean of per-occupation TVDs
    std::optional<double> ethnicity_tvd_pooled;  // TVD of the pooled distribution
    std::optional<DprVector> intersection_dpr;
    std::array<std::optional<double>, 3> diversity;  // n-gram ratios, n = 1..3
    int64_t classified = 0;
    int64_t excluded = 0;
};

// Parity improvement of the bame slice against vanilla or baseline, per
// model: delta[i] = |ref_dpr[i] - 1| - |bame_dpr[i] - 1| over the eight
// intersections, with a signed-rank test for delta > 0.
struct DeltaReport {
    std::string model;
    std::string reference_method;
    std::vector<double> delta;
    std::optional<WilcoxonResult> wilcoxon;
    std::string reason;  // why delta or the test is missing
};

struct AuditReport {
    std::string run_id;
    int record_count = 0;
    std::vector<std::string> failed_records;
    std::vector<MethodReport> methods;  // sorted by model, then method
    std::vector<DeltaReport> deltas;
    std::string delta_reason;  // set when no model had comparable slices
};

// Throws PipelineError when the run has no usable (non-failed) records.
AuditReport analyze_records(const std::string& run_id, std::span<const BatchRecord> records);

// summary.json, table1.csv, tvd_by_occupation.csv, dpr_intersections.csv,
// delta_wilcoxon.csv, diversity.csv -- written atomically into dir.
// Deterministic: same records, same bytes.
void write_report_files(const AuditReport& report, const std::filesystem::path& dir);

// Long-format CSVs for external plotting: kind is "ethnicity", "tvd" or
// "dpr". Multi-model runs split ethnicity/tvd into one file per model.
// Returns the files written.
std::vector<std::filesystem::path> emit_plot_data(const AuditReport& report,
                                                  const std::string& kind,
                                                  const std::filesystem::path& dir);

// Flat per-story view of a run: model, method, occupation, story_index,
// story_text, gender_text, origin_text. Throws on duplicate keys (e.g.
// replicated runs, which this schema cannot hold).
std::string export_dataset_csv(std::span<const BatchRecord> records);

struct IngestStats {
    int rows = 0;
    int records = 0;
};

// Rebuilds BatchRecords from a dataset CSV (schema above, any column
// order) and persists them into the store. No backend calls: labels are
// re-resolved from gender_text/origin_text via the lexicon and table.
IngestStats ingest_dataset_csv(const std::string& csv_text, const RunStore& store,
                               const MappingTable& table, const GenderLexicon& lexicon);

}  // namespace bame
