#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bame/mock_backend.hpp"
#include "bame/pipeline.hpp"
#include "bame/report.hpp"

namespace {

std::string read_file_or_throw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw bame::ConfigError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bame::PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return bame::PipelineConfig{};
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file_or_throw(path));
    } catch (const nlohmann::json::exception& e) {
        throw bame::ConfigError(path + " is not valid JSON: " + e.what());
    }
    return bame::PipelineConfig::from_json(doc);
}

std::vector<bame::Method> parse_methods(const std::string& list) {
    std::vector<bame::Method> methods;
    size_t pos = 0;
    while (pos <= list.size()) {
        size_t comma = list.find(',', pos);
        std::string item(bame::trim(
            list.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
        if (!item.empty()) methods.push_back(bame::method_from_string(bame::to_lower_ascii(item)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    methods = bame::normalize_methods(std::move(methods));
    if (methods.empty()) throw bame::ConfigError("--methods selected nothing");
    return methods;
}

bame::MappingTable load_table(const std::string& path) {
    if (path.empty()) return bame::MappingTable::builtin_default();
    return bame::MappingTable::from_document(read_file_or_throw(path));
}

void analyze_into(const bame::RunStore& store, bool export_dataset) {
    std::vector<bame::BatchRecord> records = store.load_records();
    bame::AuditReport report = bame::analyze_records(store.run_id(), records);
    std::filesystem::path report_dir = store.root() / "report";
    bame::write_report_files(report, report_dir);
    if (export_dataset) {
        bame::RunStore::write_file_atomic(report_dir / "dataset.csv",
                                          bame::export_dataset_csv(records));
    }
    std::cout << "report: " << report_dir.string() << " (" << report.methods.size()
              << " model/method slices, " << report.record_count << " records";
    if (!report.failed_records.empty()) {
        std::cout << ", " << report.failed_records.size() << " failed";
    }
    std::cout << ")\n";
    for (const bame::MethodReport& s : report.methods) {
        std::cout << "  " << s.model << " / " << to_string(s.method) << ": " << s.classified
                  << " classified, " << s.excluded << " excluded";
        if (s.ethnicity_tvd_mean) {
            std::cout << ", ethnicity TVD mean " << *s.ethnicity_tvd_mean;
        }
        std::cout << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"demographic bias audit for story-generating chat models"};
    app.require_subcommand(1);

    std::string config_path, out_dir, methods_arg, mapping_path, run_dir, csv_path, figure;
    std::vector<std::string> occupations;
    uint64_t seed = 0;
    int batch_size = 0, replicates = 0;
    bool verbose = false, export_dataset = false;

    CLI::App* cmd_run = app.add_subcommand("run", "generate story batches and persist a run");
    cmd_run->add_option("--config", config_path, "pipeline config JSON");
    cmd_run->add_option("--out", out_dir, "run directory to create")->required();
    cmd_run->add_option("--methods", methods_arg, "comma-separated: vanilla,baseline,bame");
    cmd_run->add_option("--occupations", occupations,
                        "occupation name (repeat the flag for several)");
    CLI::Option* seed_opt = cmd_run->add_option("--seed", seed, "mock backend seed");
    CLI::Option* batch_opt = cmd_run->add_option("--batch-size", batch_size, "stories per batch");
    CLI::Option* reps_opt = cmd_run->add_option("--replicates", replicates, "repetitions per cell");
    cmd_run->add_option("--mapping-table", mapping_path, "origin mapping table TSV");
    cmd_run->add_flag("--verbose", verbose, "log per-record progress to stderr");

    CLI::App* cmd_analyze = app.add_subcommand("analyze", "compute the audit report for a run");
    cmd_analyze->add_option("run", run_dir, "run directory")->required();
    cmd_analyze->add_flag("--export-dataset", export_dataset,
                          "also write report/dataset.csv (flat per-story view)");

    CLI::App* cmd_ingest =
        app.add_subcommand("ingest", "build a run from a dataset CSV and analyze it");
    cmd_ingest->add_option("csv", csv_path, "dataset CSV path")->required();
    cmd_ingest->add_option("--out", out_dir, "run directory to create")->required();
    cmd_ingest->add_option("--mapping-table", mapping_path, "origin mapping table TSV");

    CLI::App* cmd_plot = app.add_subcommand("plot-data", "emit long-format CSVs for plotting");
    cmd_plot->add_option("run", run_dir, "run directory")->required();
    cmd_plot->add_option("--figure", figure, "ethnicity, tvd or dpr")->required();
    cmd_plot->add_option("--out", out_dir, "output directory (default: <run>/report)");

    CLI::App* cmd_templates = app.add_subcommand("templates", "dump the default prompt templates");
    cmd_templates->add_option("--out", out_dir, "directory to write <name>.txt files into");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(cmd_run)) {
            bame::PipelineConfig config = load_config(config_path);
            if (!methods_arg.empty()) config.methods = parse_methods(methods_arg);
            if (!occupations.empty()) config.occupations = occupations;
            if (*seed_opt) {
                config.seed = seed;
                config.backend.mock.seed = seed;
            }
            if (*batch_opt) config.batch_size = batch_size;
            if (*reps_opt) config.replicates = replicates;
            if (config.batch_size < 1) throw bame::ConfigError("--batch-size must be >= 1");
            if (config.replicates < 1) throw bame::ConfigError("--replicates must be >= 1");

            bame::MappingTable table = load_table(mapping_path);
            bame::PromptSet prompts = config.templates_dir.empty()
                                          ? bame::PromptSet::defaults()
                                          : bame::PromptSet::from_directory(config.templates_dir);
            bame::RunStore store = bame::RunStore::create(out_dir);
            std::unique_ptr<bame::Backend> backend = bame::make_backend(config.backend);
            bame::Runner runner(config, *backend, store, table,
                                bame::GenderLexicon::builtin_default(), prompts,
                                verbose ? &std::cerr : nullptr);
            bame::RunOutcome outcome = runner.run_all();
            std::cout << "run " << store.run_id() << ": " << outcome.records_written
                      << " records written, " << outcome.failures << " failures\n";
            return outcome.failures > 0 ? 2 : 0;
        }
        if (app.got_subcommand(cmd_analyze)) {
            bame::RunStore store = bame::RunStore::open_existing(run_dir);
            analyze_into(store, export_dataset);
            return 0;
        }
        if (app.got_subcommand(cmd_ingest)) {
            bame::MappingTable table = load_table(mapping_path);
            std::string csv_text = read_file_or_throw(csv_path);
            bame::RunStore store = bame::RunStore::create(out_dir);
            bame::IngestStats stats = bame::ingest_dataset_csv(
                csv_text, store, table, bame::GenderLexicon::builtin_default());
            nlohmann::ordered_json config;
            config["ingested"] = true;
            config["source_csv"] = csv_path;
            config["rows"] = stats.rows;
            store.write_config(config);
            std::cout << "ingested " << stats.rows << " rows into " << stats.records
                      << " records under " << store.root().string() << "\n";
            analyze_into(store, false);
            return 0;
        }
        if (app.got_subcommand(cmd_plot)) {
            bame::RunStore store = bame::RunStore::open_existing(run_dir);
            bame::AuditReport report =
                bame::analyze_records(store.run_id(), store.load_records());
            std::filesystem::path dir = out_dir.empty() ? store.root() / "report"
                                                        : std::filesystem::path(out_dir);
            std::vector<std::filesystem::path> files = bame::emit_plot_data(report, figure, dir);
            for (const std::filesystem::path& f : files) std::cout << f.string() << "\n";
            return 0;
        }
        if (app.got_subcommand(cmd_templates)) {
            bame::PromptSet prompts = bame::PromptSet::defaults();
            if (out_dir.empty()) {
                for (const bame::PromptTemplate* t :
                     {&prompts.vanilla, &prompts.baseline, &prompts.bame, &prompts.explanation,
                      &prompts.probe}) {
                    std::cout << "== " << t->name << " ==\n" << t->text << "\n\n";
                }
            } else {
                prompts.write_to(out_dir);
                std::cout << "templates written to " << out_dir << "\n";
            }
            return 0;
        }
    } catch (const bame::LockError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
