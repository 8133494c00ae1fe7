#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bame/csv.hpp"
#include "bame/report.hpp"

using namespace bame;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("bame_report_" + std::to_string(reinterpret_cast<uintptr_t>(this)) + "_" +
                std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

BatchRecord tally_record(std::string model, Method method, std::string occupation,
                         std::array<int64_t, 8> intersection, int replicate = 1) {
    BatchRecord r;
    r.model = model;
    r.method = method;
    r.occupation = occupation;
    r.replicate = replicate;
    r.record_id = model + "__" + std::string(to_string(method)) + "__" + occupation +
                  (replicate > 1 ? "__rep" + std::to_string(replicate) : "");
    r.run_id = "testrun";
    r.tally.occupation = occupation;
    r.tally.intersection = intersection;
    for (size_t e = 0; e < 4; ++e) {
        r.tally.ethnicity[e] = intersection[2 * e] + intersection[2 * e + 1];
        r.tally.gender[0] += intersection[2 * e];
        r.tally.gender[1] += intersection[2 * e + 1];
    }
    r.batch_size = static_cast<int>(r.tally.total_classified());
    return r;
}

// All-female batch with the given per-ethnicity counts.
std::array<int64_t, 8> female_cells(int64_t eu, int64_t af, int64_t api, int64_t hl) {
    return {eu, 0, af, 0, api, 0, hl, 0};
}

std::array<int64_t, 8> gender_cells(int64_t female, int64_t male) {
    return {female, male, 0, 0, 0, 0, 0, 0};
}

std::array<int64_t, 8> uniform_cells(int64_t per_cell) {
    std::array<int64_t, 8> c;
    c.fill(per_cell);
    return c;
}

const MethodReport* find_method(const AuditReport& report, const std::string& model, Method m) {
    for (const auto& slice : report.methods) {
        if (slice.model == model && slice.method == m) return &slice;
    }
    return nullptr;
}

}  // namespace

TEST_CASE("analyze rejects empty and all-failed runs") {
    std::vector<BatchRecord> none;
    CHECK_THROWS_AS(analyze_records("r", none), PipelineError);

    BatchRecord failed = tally_record("m", Method::Vanilla, "Sales", uniform_cells(1));
    failed.failed = true;
    failed.error = "induced";
    std::vector<BatchRecord> records = {failed};
    CHECK_THROWS_AS(analyze_records("r", records), PipelineError);
}

TEST_CASE("failed records are listed but not aggregated") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", uniform_cells(3)),
        tally_record("m", Method::Vanilla, "Legal", uniform_cells(3)),
    };
    records[1].failed = true;
    records[1].error = "boom";

    AuditReport report = analyze_records("r", records);
    CHECK(report.record_count == 2);
    REQUIRE(report.failed_records.size() == 1);
    CHECK(report.failed_records[0] == records[1].record_id);
    REQUIRE(report.methods.size() == 1);
    CHECK(report.methods[0].record_ids == std::vector<std::string>{records[0].record_id});
    CHECK(report.methods[0].classified == 24);
}

TEST_CASE("gender table fixture reproduces the published vanilla row") {
    std::vector<BatchRecord> records;
    int occ = 0;
    auto add = [&](int64_t female, int64_t male) {
        records.push_back(tally_record("claude", Method::Vanilla, "Occ" + std::to_string(occ++),
                                       gender_cells(female, male)));
    };
    for (int i = 0; i < 11; ++i) add(12, 12);
    for (int i = 0; i < 9; ++i) add(13, 11);
    add(14, 10);
    add(14, 10);
    add(11, 13);
    add(11, 13);
    add(10, 14);
    REQUIRE(records.size() == 25);

    AuditReport report = analyze_records("r", records);
    REQUIRE(report.methods.size() == 1);
    const MethodReport& m = report.methods[0];
    REQUIRE(m.gender_distribution.has_value());
    CHECK(m.gender_distribution->share(0) == doctest::Approx(0.515).epsilon(1e-12));
    CHECK(m.gender_distribution->share(1) == doctest::Approx(0.485).epsilon(1e-12));
    CHECK(m.representation.occupations == 25);
    CHECK(m.representation.equal_pct == 44.0);
    CHECK(m.representation.over_female_pct == 44.0);
    CHECK(m.representation.over_male_pct == 12.0);
    CHECK(m.classified == 600);

    TempDir tmp;
    write_report_files(report, tmp.path);
    std::string table1 = read_file(tmp.path / "table1.csv");
    CHECK(table1.find("claude,vanilla,51.5,48.5,44.0,44.0,12.0") != std::string::npos);
}

TEST_CASE("per-occupation TVD mean vs pooled TVD") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Balanced", female_cells(2, 2, 2, 2)),
        tally_record("m", Method::Vanilla, "Skewed", female_cells(24, 0, 0, 0)),
    };
    AuditReport report = analyze_records("r", records);
    const MethodReport& m = report.methods[0];

    REQUIRE(m.tvd_by_occupation.size() == 2);
    double balanced = -1, skewed = -1;
    for (const auto& [occ, v] : m.tvd_by_occupation) {
        if (occ == "Balanced") balanced = v;
        if (occ == "Skewed") skewed = v;
    }
    CHECK(balanced == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(skewed == doctest::Approx(0.75).epsilon(1e-12));

    REQUIRE(m.ethnicity_tvd_mean.has_value());
    REQUIRE(m.ethnicity_tvd_pooled.has_value());
    CHECK(*m.ethnicity_tvd_mean == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(*m.ethnicity_tvd_pooled == doctest::Approx(0.5625).epsilon(1e-12));
}

TEST_CASE("replicates sum into one occupation row before TVD") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", female_cells(8, 0, 0, 0), 1),
        tally_record("m", Method::Vanilla, "Sales", female_cells(0, 8, 0, 0), 2),
    };
    AuditReport report = analyze_records("r", records);
    const MethodReport& m = report.methods[0];
    REQUIRE(m.tvd_by_occupation.size() == 1);
    CHECK(m.tvd_by_occupation[0].first == "Sales");
    CHECK(m.tvd_by_occupation[0].second == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.per_occupation.size() == 1);
    CHECK(m.per_occupation[0].ethnicity == std::array<int64_t, 4>{8, 8, 0, 0});
}

TEST_CASE("deltas compare bame against vanilla when baseline is absent") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", female_cells(8, 0, 0, 0)),
        tally_record("m", Method::Bame, "Sales", uniform_cells(1)),
    };
    AuditReport report = analyze_records("r", records);
    REQUIRE(report.deltas.size() == 1);
    const DeltaReport& d = report.deltas[0];
    CHECK(d.model == "m");
    CHECK(d.reference_method == "vanilla");
    REQUIRE(d.delta.size() == 8);
    for (double v : d.delta) CHECK(v > 0.0);
    CHECK(d.delta[0] == doctest::Approx(7.0).epsilon(1e-12));
    REQUIRE(d.wilcoxon.has_value());
    CHECK(d.wilcoxon->statistic == 36.0);
    CHECK(d.wilcoxon->p_value == doctest::Approx(1.0 / 256.0).epsilon(1e-12));
    CHECK(d.wilcoxon->p_value < 0.05);
    CHECK(report.delta_reason.empty());
}

TEST_CASE("baseline outranks vanilla as the delta reference") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", female_cells(8, 0, 0, 0)),
        tally_record("m", Method::Baseline, "Sales", female_cells(4, 4, 0, 0)),
        tally_record("m", Method::Bame, "Sales", uniform_cells(1)),
    };
    AuditReport report = analyze_records("r", records);
    REQUIRE(report.deltas.size() == 1);
    CHECK(report.deltas[0].reference_method == "baseline");
}

TEST_CASE("identical slices make every delta zero and skip the test") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", uniform_cells(2)),
        tally_record("m", Method::Bame, "Sales", uniform_cells(2)),
    };
    AuditReport report = analyze_records("r", records);
    REQUIRE(report.deltas.size() == 1);
    const DeltaReport& d = report.deltas[0];
    for (double v : d.delta) CHECK(v == 0.0);
    CHECK_FALSE(d.wilcoxon.has_value());
    CHECK_FALSE(d.reason.empty());
}

TEST_CASE("no bame slice leaves a run-level reason") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", uniform_cells(2)),
    };
    AuditReport report = analyze_records("r", records);
    CHECK(report.deltas.empty());
    CHECK_FALSE(report.delta_reason.empty());

    TempDir tmp;
    write_report_files(report, tmp.path);
    auto rows = csv::parse(read_file(tmp.path / "delta_wilcoxon.csv"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].back() == report.delta_reason);
}

TEST_CASE("multi-model reports sort slices and test each model") {
    std::vector<BatchRecord> records = {
        tally_record("zeta", Method::Vanilla, "Sales", female_cells(8, 0, 0, 0)),
        tally_record("zeta", Method::Bame, "Sales", uniform_cells(1)),
        tally_record("alpha", Method::Bame, "Sales", uniform_cells(1)),
        tally_record("alpha", Method::Vanilla, "Sales", female_cells(0, 8, 0, 0)),
    };
    AuditReport report = analyze_records("r", records);
    REQUIRE(report.methods.size() == 4);
    CHECK(report.methods[0].model == "alpha");
    CHECK(report.methods[0].method == Method::Vanilla);
    CHECK(report.methods[1].model == "alpha");
    CHECK(report.methods[1].method == Method::Bame);
    CHECK(report.methods[2].model == "zeta");
    REQUIRE(report.deltas.size() == 2);
    CHECK(report.deltas[0].model == "alpha");
    CHECK(report.deltas[1].model == "zeta");
}

TEST_CASE("report files are complete, parseable, and deterministic") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", female_cells(5, 1, 1, 1)),
        tally_record("m", Method::Vanilla, "Legal", uniform_cells(1)),
        tally_record("m", Method::Bame, "Sales", uniform_cells(1)),
        tally_record("m", Method::Bame, "Legal", uniform_cells(1)),
    };
    records[0].stories = {"A story about a vendor.", "Another story about a clerk."};
    AuditReport report = analyze_records("runZ", records);

    TempDir tmp;
    fs::path dir_a = tmp.path / "a";
    fs::path dir_b = tmp.path / "b";
    write_report_files(report, dir_a);
    write_report_files(report, dir_b);

    const char* names[] = {"summary.json",       "table1.csv",    "tvd_by_occupation.csv",
                           "dpr_intersections.csv", "delta_wilcoxon.csv", "diversity.csv"};
    for (const char* name : names) {
        CAPTURE(name);
        REQUIRE(fs::exists(dir_a / name));
        std::string a = read_file(dir_a / name);
        CHECK(a == read_file(dir_b / name));
        CHECK_FALSE(a.empty());
    }

    for (const char* name : {"table1.csv", "tvd_by_occupation.csv", "dpr_intersections.csv",
                             "delta_wilcoxon.csv", "diversity.csv"}) {
        std::string text = read_file(dir_a / name);
        auto rows = csv::parse(text);
        REQUIRE(rows.size() >= 2);
        for (const auto& row : rows) CHECK(row.size() == rows[0].size());
        // RFC 4180 line endings.
        CHECK(text.find("\r\n") != std::string::npos);
    }

    nlohmann::json summary = nlohmann::json::parse(read_file(dir_a / "summary.json"));
    CHECK(summary["run_id"] == "runZ");
    CHECK(summary["record_count"] == 4);
    CHECK(summary["dpr_weighting"] == "character");
    REQUIRE(summary["methods"].is_array());
    CHECK(summary["methods"].size() == 2);
    CHECK(summary["methods"][0]["record_ids"].size() == 2);
    CHECK(summary["deltas"].size() == 1);

    auto tvd_rows = csv::parse(read_file(dir_a / "tvd_by_occupation.csv"));
    CHECK(tvd_rows[0] == std::vector<std::string>{"model", "method", "occupation", "tvd"});
    auto dpr_rows = csv::parse(read_file(dir_a / "dpr_intersections.csv"));
    CHECK(dpr_rows[0] == std::vector<std::string>{"model", "method", "intersection", "ratio"});
    CHECK(dpr_rows.size() == 1 + 2 * 8);
}

TEST_CASE("plot data files") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", female_cells(5, 1, 1, 1)),
        tally_record("m", Method::Bame, "Sales", uniform_cells(1)),
    };
    AuditReport report = analyze_records("r", records);
    TempDir tmp;

    auto eth = emit_plot_data(report, "ethnicity", tmp.path);
    REQUIRE(eth.size() == 1);
    CHECK(eth[0].filename() == "plot_ethnicity.csv");
    auto rows = csv::parse(read_file(eth[0]));
    CHECK(rows[0] == std::vector<std::string>{"occupation", "method", "category", "share"});
    double sum = 0;
    for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i][1] == "vanilla") sum += std::stod(rows[i][3]);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

    auto tvd_files = emit_plot_data(report, "tvd", tmp.path);
    REQUIRE(tvd_files.size() == 1);
    CHECK(tvd_files[0].filename() == "plot_tvd.csv");

    auto dpr_files = emit_plot_data(report, "dpr", tmp.path);
    REQUIRE(dpr_files.size() == 1);
    auto dpr_rows = csv::parse(read_file(dpr_files[0]));
    CHECK(dpr_rows[0] == std::vector<std::string>{"model", "method", "intersection", "ratio"});

    CHECK_THROWS_AS(emit_plot_data(report, "spaghetti", tmp.path), std::invalid_argument);
}

TEST_CASE("plot data splits per model when several models ran") {
    std::vector<BatchRecord> records = {
        tally_record("alpha", Method::Vanilla, "Sales", uniform_cells(1)),
        tally_record("zeta", Method::Vanilla, "Sales", uniform_cells(1)),
    };
    AuditReport report = analyze_records("r", records);
    TempDir tmp;
    auto files = emit_plot_data(report, "tvd", tmp.path);
    REQUIRE(files.size() == 2);
    CHECK(files[0].filename() == "plot_tvd__alpha.csv");
    CHECK(files[1].filename() == "plot_tvd__zeta.csv");
}

TEST_CASE("dataset export schema") {
    std::vector<BatchRecord> records = {
        tally_record("m", Method::Vanilla, "Sales", gender_cells(1, 1)),
    };
    records[0].stories = {"Ana (Hispanic female), a vendor.", "Lee, a Korean male clerk."};
    RawExtraction e0;
    e0.story_index = 0;
    e0.gender_text = "female";
    e0.origin_text = "Hispanic";
    RawExtraction e1;
    e1.story_index = 1;
    e1.gender_text = "male";
    e1.origin_text = "Korean";
    records[0].labels = {e0, e1};

    std::string csv_text = export_dataset_csv(records);
    auto rows = csv::parse(csv_text);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"model", "method", "occupation", "story_index",
                                              "story_text", "gender_text", "origin_text"});
    CHECK(rows[1] == std::vector<std::string>{"m", "vanilla", "Sales", "0",
                                              "Ana (Hispanic female), a vendor.", "female",
                                              "Hispanic"});
    CHECK(rows[2][3] == "1");

    // Failed records are skipped.
    BatchRecord failed = records[0];
    failed.failed = true;
    failed.record_id += "_x";
    std::vector<BatchRecord> with_failed = {records[0], failed};
    // Identical keys would collide, but the failed one is dropped first.
    CHECK(csv::parse(export_dataset_csv(with_failed)).size() == 3);

    // Replicates collide on the flat schema.
    BatchRecord rep = records[0];
    rep.replicate = 2;
    rep.record_id = "m__vanilla__Sales__rep2";
    std::vector<BatchRecord> duplicated = {records[0], rep};
    CHECK_THROWS_AS(export_dataset_csv(duplicated), PipelineError);
}

TEST_CASE("ingest validates its schema") {
    TempDir tmp;
    const MappingTable& table = MappingTable::builtin_default();
    const GenderLexicon& lexicon = GenderLexicon::builtin_default();

    auto ingest_into = [&](const std::string& text, const char* dir) {
        RunStore store = RunStore::create(tmp.path / dir);
        return ingest_dataset_csv(text, store, table, lexicon);
    };

    CHECK_THROWS_AS(ingest_into("", "r0"), ConfigError);
    CHECK_THROWS_AS(
        ingest_into("model,method,occupation,story_index,story_text,gender_text,origin_text\r\n",
                    "r1"),
        ConfigError);

    // Missing and unexpected columns are named.
    try {
        ingest_into("model,method,occupation,story_index,story_text,gender_text,flavor\r\n"
                    "m,vanilla,Sales,0,text,female,sweet\r\n",
                    "r2");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string what = e.what();
        CHECK(what.find("origin_text") != std::string::npos);
        CHECK(what.find("flavor") != std::string::npos);
    }

    std::string header =
        "model,method,occupation,story_index,story_text,gender_text,origin_text\r\n";
    CHECK_THROWS_AS(ingest_into(header + "m,vanilla,Sales,zero,text,female,White\r\n", "r3"),
                    ConfigError);
    CHECK_THROWS_AS(ingest_into(header + "m,mystery,Sales,0,text,female,White\r\n", "r4"),
                    ConfigError);
    CHECK_THROWS_AS(ingest_into(header + ",vanilla,Sales,0,text,female,White\r\n", "r5"),
                    ConfigError);
    CHECK_THROWS_AS(ingest_into(header + "m,vanilla,Sales,0,text,female\r\n", "r6"),
                    ConfigError);

    // Duplicate keys name both rows.
    try {
        ingest_into(header + "m,vanilla,Sales,0,text,female,White\r\n" +
                        "m,vanilla,Sales,0,other,male,Korean\r\n",
                    "r7");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string what = e.what();
        CHECK(what.find("2") != std::string::npos);
        CHECK(what.find("3") != std::string::npos);
    }
}

TEST_CASE("ingest rebuilds records with re-resolved labels") {
    TempDir tmp;
    std::string csv_text =
        "model,method,occupation,story_index,story_text,gender_text,origin_text\r\n"
        "m,vanilla,Sales,1,Second story.,male,Korean-American\r\n"
        "m,vanilla,Sales,0,First story.,female,White Canadian\r\n"
        "m,vanilla,Sales,2,Third story.,,\r\n"
        "m,bame,Sales,0,Other story.,woman,Nigerian\r\n";

    RunStore store = RunStore::create(tmp.path / "run");
    IngestStats stats =
        ingest_dataset_csv(csv_text, store, MappingTable::builtin_default(),
                           GenderLexicon::builtin_default());
    CHECK(stats.rows == 4);
    CHECK(stats.records == 2);

    auto records = store.load_records();
    REQUIRE(records.size() == 2);
    const BatchRecord* vanilla = nullptr;
    const BatchRecord* bame = nullptr;
    for (const auto& r : records) {
        if (r.method == Method::Vanilla) vanilla = &r;
        if (r.method == Method::Bame) bame = &r;
    }
    REQUIRE(vanilla != nullptr);
    REQUIRE(bame != nullptr);

    // Rows are reordered by story_index.
    REQUIRE(vanilla->stories.size() == 3);
    CHECK(vanilla->stories[0] == "First story.");
    CHECK(vanilla->stories[1] == "Second story.");
    CHECK(vanilla->labels[0].resolved.gender == Gender::Female);
    CHECK(vanilla->labels[0].resolved.ethnicity == EthnicityCategory::European);
    CHECK(vanilla->labels[1].resolved.ethnicity == EthnicityCategory::Api);
    CHECK_FALSE(vanilla->labels[2].gender_text.has_value());
    CHECK(vanilla->labels[2].resolved.gender == Gender::Unstated);
    CHECK(vanilla->tally.total_classified() == 2);
    CHECK(vanilla->tally.excluded == 1);

    CHECK(bame->labels[0].resolved.gender == Gender::Female);
    CHECK(bame->labels[0].resolved.ethnicity == EthnicityCategory::African);
}

TEST_CASE("exported runs ingest back to the same report") {
    TempDir tmp;
    PipelineConfig cfg;
    cfg.backend.kind = BackendKind::Mock;
    cfg.backend.mock.seed = 99;
    cfg.seed = 99;
    cfg.occupations = {"Sales", "Legal"};
    cfg.methods = {Method::Vanilla, Method::Bame};
    cfg.batch_size = 8;
    cfg.extraction_agent = false;

    auto backend = make_backend(cfg.backend);
    PromptSet prompts = PromptSet::defaults();

    fs::path original_dir = tmp.path / "original";
    RunStore original = RunStore::create(original_dir);
    Runner runner(cfg, *backend, original, MappingTable::builtin_default(),
                  GenderLexicon::builtin_default(), prompts);
    RunOutcome outcome = runner.run_all();
    REQUIRE(outcome.failures == 0);

    auto original_records = original.load_records();
    std::string csv_text = export_dataset_csv(original_records);

    fs::path ingested_dir = tmp.path / "ingested";
    RunStore ingested = RunStore::create(ingested_dir);
    ingest_dataset_csv(csv_text, ingested, MappingTable::builtin_default(),
                       GenderLexicon::builtin_default());

    AuditReport report_a = analyze_records("same", original_records);
    auto ingested_records = ingested.load_records();
    AuditReport report_b = analyze_records("same", ingested_records);

    TempDir out;
    fs::path dir_a = out.path / "a";
    fs::path dir_b = out.path / "b";
    write_report_files(report_a, dir_a);
    write_report_files(report_b, dir_b);
    for (const char* name : {"summary.json", "table1.csv", "tvd_by_occupation.csv",
                             "dpr_intersections.csv", "delta_wilcoxon.csv", "diversity.csv"}) {
        CAPTURE(name);
        CHECK(read_file(dir_a / name) == read_file(dir_b / name));
    }
}
