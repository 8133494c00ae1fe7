#include "bame/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "bame/csv.hpp"
#include "bame/text_util.hpp"

namespace bame {
namespace {

std::string fmt(double value, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, value);
    return buf;
}

std::string pct1(double fraction) { return fmt(100.0 * fraction, "%.1f"); }

int method_rank(Method m) {
    switch (m) {
        case Method::Vanilla: return 0;
        case Method::Baseline: return 1;
        case Method::Bame: return 2;
    }
    return 0;
}

const MethodReport* find_slice(const AuditReport& report, const std::string& model, Method method) {
    for (const MethodReport& s : report.methods) {
        if (s.model == model && s.method == method) return &s;
    }
    return nullptr;
}

nlohmann::ordered_json distribution_json(const std::optional<Distribution>& dist) {
    if (!dist) return nullptr;
    nlohmann::ordered_json out;
    const std::vector<std::string>& names = axis_categories(dist->axis());
    for (size_t i = 0; i < names.size(); ++i) out[names[i]] = dist->share(i);
    return out;
}

}  // namespace

AuditReport analyze_records(const std::string& run_id, std::span<const BatchRecord> records) {
    if (records.empty()) throw PipelineError("run has no records to analyze");

    AuditReport report;
    report.run_id = run_id;
    report.record_count = static_cast<int>(records.size());

    // group usable records by (model, method)
    std::map<std::pair<std::string, int>, std::vector<const BatchRecord*>> groups;
    for (const BatchRecord& r : records) {
        if (r.failed) {
            report.failed_records.push_back(r.record_id);
            continue;
        }
        groups[{r.model, method_rank(r.method)}].push_back(&r);
    }
    if (groups.empty()) throw PipelineError("run has no usable records (all flagged failed)");

    const Distribution ethnicity_target = target_distribution(Axis::Ethnicity);
    const Distribution intersection_target = target_distribution(Axis::Intersection);

    for (const auto& [key, members] : groups) {
        MethodReport slice;
        slice.model = key.first;
        slice.method = members.front()->method;

        // per-occupation tallies (replicates summed), in first-seen order
        std::vector<std::string> occupation_order;
        std::map<std::string, BatchTally> by_occupation;
        std::vector<std::string> all_stories;
        for (const BatchRecord* r : members) {
            slice.record_ids.push_back(r->record_id);
            auto [it, fresh] = by_occupation.try_emplace(r->occupation, r->tally);
            if (fresh) {
                occupation_order.push_back(r->occupation);
            } else {
                it->second += r->tally;
            }
            all_stories.insert(all_stories.end(), r->stories.begin(), r->stories.end());
        }
        for (const std::string& occ : occupation_order) {
            slice.per_occupation.push_back(by_occupation.at(occ));
        }
        slice.pooled = sum_tallies(slice.per_occupation);
        slice.pooled.occupation = "all";
        slice.classified = slice.pooled.total_classified();
        slice.excluded = slice.pooled.excluded;

        if (slice.classified > 0) {
            slice.gender_distribution = distribution_of(slice.pooled, Axis::Gender);
            slice.ethnicity_distribution = distribution_of(slice.pooled, Axis::Ethnicity);
            slice.ethnicity_tvd_pooled = tvd(*slice.ethnicity_distribution, ethnicity_target);
            slice.intersection_dpr =
                dpr(distribution_of(slice.pooled, Axis::Intersection), intersection_target);
        }
        slice.representation = representation_summary(slice.per_occupation);

        double tvd_sum = 0;
        for (const BatchTally& t : slice.per_occupation) {
            if (t.total_classified() == 0) continue;
            Distribution d = distribution_of(t, Axis::Ethnicity);
            double v = tvd(d, ethnicity_target);
            slice.ethnicity_by_occupation.emplace_back(t.occupation, d);
            slice.tvd_by_occupation.emplace_back(t.occupation, v);
            tvd_sum += v;
        }
        if (!slice.tvd_by_occupation.empty()) {
            slice.ethnicity_tvd_mean = tvd_sum / static_cast<double>(slice.tvd_by_occupation.size());
        }

        bool have_tokens = false;
        for (const std::string& s : all_stories) {
            if (!tokenize(s).empty()) {
                have_tokens = true;
                break;
            }
        }
        if (have_tokens) {
            for (int n = 1; n <= 3; ++n) {
                slice.diversity[static_cast<size_t>(n - 1)] = ngram_diversity(all_stories, n);
            }
        }
        report.methods.push_back(std::move(slice));
    }

    std::sort(report.methods.begin(), report.methods.end(),
              [](const MethodReport& a, const MethodReport& b) {
                  if (a.model != b.model) return a.model < b.model;
                  return method_rank(a.method) < method_rank(b.method);
              });

    // per-model parity deltas: bame against baseline (vanilla when absent)
    std::set<std::string> models;
    for (const MethodReport& s : report.methods) models.insert(s.model);
    for (const std::string& model : models) {
        const MethodReport* bame = find_slice(report, model, Method::Bame);
        const MethodReport* baseline = find_slice(report, model, Method::Baseline);
        const MethodReport* vanilla = find_slice(report, model, Method::Vanilla);
        const MethodReport* reference = baseline != nullptr ? baseline : vanilla;
        if (bame == nullptr || reference == nullptr) continue;

        DeltaReport delta;
        delta.model = model;
        delta.reference_method = std::string(to_string(reference->method));
        if (!bame->intersection_dpr || !reference->intersection_dpr) {
            delta.reason = "a compared slice has no classified characters";
        } else {
            delta.delta = delta_correction(*reference->intersection_dpr, *bame->intersection_dpr);
            try {
                delta.wilcoxon = wilcoxon_signed_rank(delta.delta, Alternative::Greater);
            } catch (const std::invalid_argument&) {
                delta.reason = "all deltas are zero; signed-rank test undefined";
            }
        }
        report.deltas.push_back(std::move(delta));
    }
    if (report.deltas.empty()) {
        report.delta_reason =
            "delta needs a bame slice plus a baseline or vanilla slice for the same model";
    }
    return report;
}

namespace {

std::string table1_csv(const AuditReport& report) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"model", "method", "female_pct", "male_pct",
                                                 "equal_pct", "over_female_pct", "over_male_pct"});
    for (const MethodReport& s : report.methods) {
        double female = s.gender_distribution ? s.gender_distribution->share(0) : 0.0;
        double male = s.gender_distribution ? s.gender_distribution->share(1) : 0.0;
        csv::write_row(out, std::vector<std::string>{
                                s.model, std::string(to_string(s.method)), pct1(female), pct1(male),
                                fmt(s.representation.equal_pct, "%.1f"),
                                fmt(s.representation.over_female_pct, "%.1f"),
                                fmt(s.representation.over_male_pct, "%.1f")});
    }
    return out.str();
}

std::string tvd_csv(const AuditReport& report) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"model", "method", "occupation", "tvd"});
    for (const MethodReport& s : report.methods) {
        for (const auto& [occupation, value] : s.tvd_by_occupation) {
            csv::write_row(out, std::vector<std::string>{s.model, std::string(to_string(s.method)),
                                                         occupation, fmt(value)});
        }
    }
    return out.str();
}

std::string dpr_csv(const AuditReport& report) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"model", "method", "intersection", "ratio"});
    const std::vector<std::string>& names = axis_categories(Axis::Intersection);
    for (const MethodReport& s : report.methods) {
        if (!s.intersection_dpr) continue;
        for (size_t i = 0; i < names.size(); ++i) {
            csv::write_row(out, std::vector<std::string>{s.model, std::string(to_string(s.method)),
                                                         names[i], fmt(s.intersection_dpr->ratio(i))});
        }
    }
    return out.str();
}

std::string delta_csv(const AuditReport& report) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"model", "reference_method", "intersection", "delta",
                                                 "w_statistic", "p_value", "n_effective",
                                                 "test_method", "reason"});
    if (report.deltas.empty()) {
        csv::write_row(out,
                       std::vector<std::string>{"", "", "", "", "", "", "", "", report.delta_reason});
        return out.str();
    }
    const std::vector<std::string>& names = axis_categories(Axis::Intersection);
    for (const DeltaReport& d : report.deltas) {
        if (d.delta.empty()) {
            csv::write_row(out, std::vector<std::string>{d.model, d.reference_method, "", "", "", "",
                                                         "", "", d.reason});
            continue;
        }
        std::string w, p, n, method;
        if (d.wilcoxon) {
            w = fmt(d.wilcoxon->statistic, "%.1f");
            p = fmt(d.wilcoxon->p_value, "%.6g");
            n = std::to_string(d.wilcoxon->n_effective);
            method = d.wilcoxon->method == TestMethod::Exact ? "exact" : "normal_approx";
        }
        for (size_t i = 0; i < names.size(); ++i) {
            csv::write_row(out, std::vector<std::string>{d.model, d.reference_method, names[i],
                                                         fmt(d.delta[i]), w, p, n, method, d.reason});
        }
    }
    return out.str();
}

std::string diversity_csv(const AuditReport& report) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"model", "method", "n", "distinct_ratio"});
    for (const MethodReport& s : report.methods) {
        for (int n = 1; n <= 3; ++n) {
            const std::optional<double>& value = s.diversity[static_cast<size_t>(n - 1)];
            if (!value) continue;
            csv::write_row(out, std::vector<std::string>{s.model, std::string(to_string(s.method)),
                                                         std::to_string(n), fmt(*value)});
        }
    }
    return out.str();
}

nlohmann::ordered_json summary_json(const AuditReport& report) {
    nlohmann::ordered_json out;
    out["run_id"] = report.run_id;
    out["record_count"] = report.record_count;
    out["failed_records"] = report.failed_records;
    out["dpr_weighting"] = "character";

    nlohmann::ordered_json slices = nlohmann::ordered_json::array();
    for (const MethodReport& s : report.methods) {
        nlohmann::ordered_json node;
        node["model"] = s.model;
        node["method"] = std::string(to_string(s.method));
        node["record_ids"] = s.record_ids;
        node["occupations"] = s.per_occupation.size();
        node["classified"] = s.classified;
        node["excluded"] = s.excluded;
        node["gender_distribution"] = distribution_json(s.gender_distribution);
        node["representation"] = {{"occupations", s.representation.occupations},
                                  {"equal_pct", s.representation.equal_pct},
                                  {"over_female_pct", s.representation.over_female_pct},
                                  {"over_male_pct", s.representation.over_male_pct}};
        node["ethnicity_distribution"] = distribution_json(s.ethnicity_distribution);
        nlohmann::ordered_json by_occ = nlohmann::ordered_json::array();
        for (const auto& [occupation, value] : s.tvd_by_occupation) {
            by_occ.push_back({{"occupation", occupation}, {"tvd", value}});
        }
        node["tvd_by_occupation"] = std::move(by_occ);
        node["ethnicity_tvd_mean"] = s.ethnicity_tvd_mean
                                         ? nlohmann::ordered_json(*s.ethnicity_tvd_mean)
                                         : nlohmann::ordered_json(nullptr);
        node["ethnicity_tvd_pooled"] = s.ethnicity_tvd_pooled
                                           ? nlohmann::ordered_json(*s.ethnicity_tvd_pooled)
                                           : nlohmann::ordered_json(nullptr);
        if (s.intersection_dpr) {
            nlohmann::ordered_json ratios;
            const std::vector<std::string>& names = axis_categories(Axis::Intersection);
            for (size_t i = 0; i < names.size(); ++i) ratios[names[i]] = s.intersection_dpr->ratio(i);
            node["intersection_dpr"] = std::move(ratios);
        } else {
            node["intersection_dpr"] = nullptr;
        }
        nlohmann::ordered_json diversity;
        for (int n = 1; n <= 3; ++n) {
            const std::optional<double>& value = s.diversity[static_cast<size_t>(n - 1)];
            diversity[std::to_string(n)] =
                value ? nlohmann::ordered_json(*value) : nlohmann::ordered_json(nullptr);
        }
        node["diversity"] = std::move(diversity);
        slices.push_back(std::move(node));
    }
    out["methods"] = std::move(slices);

    nlohmann::ordered_json deltas = nlohmann::ordered_json::array();
    const std::vector<std::string>& names = axis_categories(Axis::Intersection);
    for (const DeltaReport& d : report.deltas) {
        nlohmann::ordered_json node;
        node["model"] = d.model;
        node["reference_method"] = d.reference_method;
        if (d.delta.empty()) {
            node["delta"] = nullptr;
        } else {
            nlohmann::ordered_json values;
            for (size_t i = 0; i < names.size(); ++i) values[names[i]] = d.delta[i];
            node["delta"] = std::move(values);
        }
        if (d.wilcoxon) {
            node["wilcoxon"] = {
                {"w", d.wilcoxon->statistic},
                {"p_value", d.wilcoxon->p_value},
                {"n_effective", d.wilcoxon->n_effective},
                {"method", d.wilcoxon->method == TestMethod::Exact ? "exact" : "normal_approx"}};
        } else {
            node["wilcoxon"] = nullptr;
        }
        node["reason"] = d.reason;
        deltas.push_back(std::move(node));
    }
    out["deltas"] = std::move(deltas);
    out["delta_reason"] = report.delta_reason;
    return out;
}

}  // namespace

void write_report_files(const AuditReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    RunStore::write_file_atomic(dir / "summary.json", summary_json(report).dump(2) + "\n");
    RunStore::write_file_atomic(dir / "table1.csv", table1_csv(report));
    RunStore::write_file_atomic(dir / "tvd_by_occupation.csv", tvd_csv(report));
    RunStore::write_file_atomic(dir / "dpr_intersections.csv", dpr_csv(report));
    RunStore::write_file_atomic(dir / "delta_wilcoxon.csv", delta_csv(report));
    RunStore::write_file_atomic(dir / "diversity.csv", diversity_csv(report));
}

std::vector<std::filesystem::path> emit_plot_data(const AuditReport& report,
                                                  const std::string& kind,
                                                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::set<std::string> models;
    for (const MethodReport& s : report.methods) models.insert(s.model);
    bool multi_model = models.size() > 1;

    std::vector<std::filesystem::path> written;
    auto emit_per_model = [&](const std::string& base,
                              auto&& rows_for) {  // rows_for(model) -> csv text
        for (const std::string& model : models) {
            std::string name = base;
            if (multi_model) name += "__" + RunStore::sanitize_component(model);
            std::filesystem::path path = dir / (name + ".csv");
            RunStore::write_file_atomic(path, rows_for(model));
            written.push_back(path);
        }
    };

    if (kind == "ethnicity") {
        emit_per_model("plot_ethnicity", [&](const std::string& model) {
            std::ostringstream out;
            csv::write_row(out,
                           std::vector<std::string>{"occupation", "method", "category", "share"});
            const std::vector<std::string>& names = axis_categories(Axis::Ethnicity);
            for (const MethodReport& s : report.methods) {
                if (s.model != model) continue;
                for (const auto& [occupation, dist] : s.ethnicity_by_occupation) {
                    for (size_t i = 0; i < names.size(); ++i) {
                        csv::write_row(out, std::vector<std::string>{
                                                occupation, std::string(to_string(s.method)),
                                                names[i], fmt(dist.share(i))});
                    }
                }
            }
            return out.str();
        });
    } else if (kind == "tvd") {
        emit_per_model("plot_tvd", [&](const std::string& model) {
            std::ostringstream out;
            csv::write_row(out, std::vector<std::string>{"occupation", "method", "tvd"});
            for (const MethodReport& s : report.methods) {
                if (s.model != model) continue;
                for (const auto& [occupation, value] : s.tvd_by_occupation) {
                    csv::write_row(out, std::vector<std::string>{
                                            occupation, std::string(to_string(s.method)), fmt(value)});
                }
            }
            return out.str();
        });
    } else if (kind == "dpr") {
        std::filesystem::path path = dir / "plot_dpr.csv";
        RunStore::write_file_atomic(path, dpr_csv(report));
        written.push_back(path);
    } else {
        throw std::invalid_argument("unknown figure kind \"" + kind +
                                    "\" (expected ethnicity, tvd or dpr)");
    }
    return written;
}

std::string export_dataset_csv(std::span<const BatchRecord> records) {
    std::ostringstream out;
    csv::write_row(out, std::vector<std::string>{"model", "method", "occupation", "story_index",
                                                 "story_text", "gender_text", "origin_text"});
    std::set<std::tuple<std::string, std::string, std::string, int>> seen;
    for (const BatchRecord& r : records) {
        if (r.failed) continue;
        for (size_t i = 0; i < r.stories.size(); ++i) {
            const RawExtraction* label = i < r.labels.size() ? &r.labels[i] : nullptr;
            int index = label ? label->story_index : static_cast<int>(i);
            auto key = std::make_tuple(r.model, std::string(to_string(r.method)), r.occupation, index);
            if (!seen.insert(key).second) {
                throw PipelineError(
                    "dataset export: duplicate (model, method, occupation, story_index) for " +
                    r.record_id + " story " + std::to_string(index) +
                    " (replicated runs cannot be exported to this schema)");
            }
            csv::write_row(out, std::vector<std::string>{
                                    r.model, std::string(to_string(r.method)), r.occupation,
                                    std::to_string(index), r.stories[i],
                                    label && label->gender_text ? *label->gender_text : "",
                                    label && label->origin_text ? *label->origin_text : ""});
        }
    }
    return out.str();
}

IngestStats ingest_dataset_csv(const std::string& csv_text, const RunStore& store,
                               const MappingTable& table, const GenderLexicon& lexicon) {
    std::vector<std::vector<std::string>> rows = csv::parse(csv_text);
    if (rows.empty()) throw ConfigError("dataset CSV is empty");

    const std::vector<std::string> expected = {"model",      "method",      "occupation",
                                               "story_index", "story_text", "gender_text",
                                               "origin_text"};
    std::map<std::string, size_t> column;
    for (size_t i = 0; i < rows[0].size(); ++i) column[rows[0][i]] = i;
    std::string missing, unexpected;
    for (const std::string& name : expected) {
        if (!column.count(name)) missing += (missing.empty() ? "" : ", ") + name;
    }
    for (const auto& [name, idx] : column) {
        if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
            unexpected += (unexpected.empty() ? "" : ", ") + name;
        }
    }
    if (!missing.empty() || !unexpected.empty()) {
        std::string msg = "dataset CSV schema mismatch";
        if (!missing.empty()) msg += "; missing columns: " + missing;
        if (!unexpected.empty()) msg += "; unexpected columns: " + unexpected;
        throw ConfigError(msg);
    }
    if (rows.size() < 2) throw ConfigError("dataset CSV has a header but no rows");

    struct Row {
        int number;  // 1-based CSV line for messages
        int story_index;
        std::string story, gender, origin;
    };
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<Row>> groups;
    std::map<std::tuple<std::string, std::string, std::string, int>, int> seen;

    for (size_t i = 1; i < rows.size(); ++i) {
        const std::vector<std::string>& cells = rows[i];
        if (cells.size() != rows[0].size()) {
            throw ConfigError("dataset CSV row " + std::to_string(i + 1) + " has " +
                              std::to_string(cells.size()) + " fields, header has " +
                              std::to_string(rows[0].size()));
        }
        auto cell = [&](const char* name) { return cells[column.at(name)]; };
        std::string model = cell("model");
        std::string method = to_lower_ascii(cell("method"));
        std::string occupation = cell("occupation");
        if (model.empty() || occupation.empty()) {
            throw ConfigError("dataset CSV row " + std::to_string(i + 1) +
                              ": model and occupation must be non-empty");
        }
        try {
            method_from_string(method);
        } catch (const ConfigError&) {
            throw ConfigError("dataset CSV row " + std::to_string(i + 1) + ": unknown method '" +
                              method + "'");
        }
        int index = 0;
        try {
            index = std::stoi(cell("story_index"));
        } catch (const std::exception&) {
            throw ConfigError("dataset CSV row " + std::to_string(i + 1) +
                              ": story_index is not an integer");
        }
        auto key = std::make_tuple(model, method, occupation, index);
        auto [it, fresh] = seen.try_emplace(key, static_cast<int>(i + 1));
        if (!fresh) {
            throw ConfigError("dataset CSV row " + std::to_string(i + 1) +
                              " duplicates (model, method, occupation, story_index) from row " +
                              std::to_string(it->second));
        }
        groups[{model, method, occupation}].push_back(
            {static_cast<int>(i + 1), index, cell("story_text"), cell("gender_text"),
             cell("origin_text")});
    }

    IngestStats stats;
    stats.rows = static_cast<int>(rows.size() - 1);
    for (auto& [key, group_rows] : groups) {
        std::sort(group_rows.begin(), group_rows.end(),
                  [](const Row& a, const Row& b) { return a.story_index < b.story_index; });
        BatchRecord record;
        record.record_id = std::get<0>(key) + "__" + std::get<1>(key) + "__" + std::get<2>(key);
        record.run_id = store.run_id();
        record.model = std::get<0>(key);
        record.method = method_from_string(std::get<1>(key));
        record.occupation = std::get<2>(key);
        record.batch_size = static_cast<int>(group_rows.size());
        for (size_t i = 0; i < group_rows.size(); ++i) {
            const Row& row = group_rows[i];
            record.stories.push_back(row.story);
            RawExtraction x;
            x.story_index = static_cast<int>(i);
            x.source = LabelSource::Agent;
            if (!trim(row.gender).empty()) x.gender_text = row.gender;
            if (!trim(row.origin).empty()) x.origin_text = row.origin;
            if (x.gender_text) {
                for (const Token& t : tokenize(*x.gender_text)) {
                    if (auto g = lexicon.lookup(t.text)) {
                        x.resolved.gender = *g;
                        break;
                    }
                }
            }
            if (x.origin_text) {
                x.resolved.origin_text = *x.origin_text;
                x.resolved.ethnicity = classify_origin(*x.origin_text, table);
            }
            record.labels.push_back(std::move(x));
        }
        std::vector<DemographicLabel> resolved;
        for (const RawExtraction& x : record.labels) resolved.push_back(x.resolved);
        record.tally = tally_batch(resolved, record.occupation);
        store.write_record(record);
        ++stats.records;
    }
    return stats;
}

}  // namespace bame
