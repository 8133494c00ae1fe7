// Acceptance gate: one line per criterion, nonzero exit when any fails.
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bame/demographics.hpp"
#include "bame/extraction.hpp"
#include "bame/metrics.hpp"
#include "bame/pipeline.hpp"
#include "bame/report.hpp"
#include "bame/stats.hpp"

using namespace bame;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Checker {
    std::ostringstream detail;
    int failures = 0;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            ++failures;
            if (detail.tellp() > 0) detail << "; ";
            detail << what;
        }
    }
};

int g_failed = 0;

void run_criterion(int number, const std::string& title,
                   const std::function<void(Checker&)>& body) {
    Checker c;
    try {
        body(c);
    } catch (const std::exception& e) {
        c.require(false, std::string("exception: ") + e.what());
    }
    if (c.failures == 0) {
        std::cout << "[PASS] criterion " << number << ": " << title << "\n";
    } else {
        ++g_failed;
        std::cout << "[FAIL] criterion " << number << ": " << title << " (" << c.detail.str()
                  << ")\n";
    }
}

void skip_criterion(int number, const std::string& title, const std::string& reason) {
    std::cout << "[SKIP] criterion " << number << ": " << title << " (" << reason << ")\n";
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct ScopedTempDir {
    fs::path path;
    explicit ScopedTempDir(const std::string& stem) {
        path = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~ScopedTempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Independent exact-distribution oracle: all 2^n sign assignments.
struct OracleResult {
    double statistic = 0;
    double p_value = 1;
};

OracleResult brute_force_wilcoxon(const std::vector<double>& diffs, Alternative alt) {
    std::vector<double> mags;
    std::vector<bool> pos;
    for (double d : diffs) {
        if (d == 0.0) continue;
        mags.push_back(std::fabs(d));
        pos.push_back(d > 0.0);
    }
    size_t n = mags.size();
    std::vector<long> rank2(n);
    for (size_t i = 0; i < n; ++i) {
        long smaller = 0, equal = 0;
        for (size_t j = 0; j < n; ++j) {
            if (mags[j] < mags[i]) ++smaller;
            if (mags[j] == mags[i]) ++equal;
        }
        rank2[i] = 2 * smaller + equal + 1;
    }
    long w2 = 0;
    for (size_t i = 0; i < n; ++i) {
        if (pos[i]) w2 += rank2[i];
    }
    uint64_t ge = 0, le = 0;
    uint64_t assignments = uint64_t{1} << n;
    for (uint64_t mask = 0; mask < assignments; ++mask) {
        long s2 = 0;
        for (size_t i = 0; i < n; ++i) {
            if (mask & (uint64_t{1} << i)) s2 += rank2[i];
        }
        if (s2 >= w2) ++ge;
        if (s2 <= w2) ++le;
    }
    OracleResult r;
    r.statistic = static_cast<double>(w2) / 2.0;
    double denom = static_cast<double>(assignments);
    if (alt == Alternative::Greater) {
        r.p_value = static_cast<double>(ge) / denom;
    } else {
        r.p_value = std::min(1.0, 2.0 * static_cast<double>(std::min(ge, le)) / denom);
    }
    return r;
}

PipelineConfig seeded_mock_config(uint64_t seed) {
    PipelineConfig cfg;
    cfg.backend.kind = BackendKind::Mock;
    cfg.backend.model = "mock-model";
    cfg.backend.mock.seed = seed;
    cfg.seed = seed;
    cfg.occupations = {"Sales", "Healthcare", "Legal"};
    cfg.batch_size = 24;
    cfg.extraction_agent = false;
    return cfg;
}

AuditReport execute_run(const PipelineConfig& cfg, const fs::path& dir) {
    auto backend = make_backend(cfg.backend);
    RunStore store = RunStore::create(dir);
    PromptSet prompts = PromptSet::defaults();
    Runner runner(cfg, *backend, store, MappingTable::builtin_default(),
                  GenderLexicon::builtin_default(), prompts);
    RunOutcome outcome = runner.run_all();
    if (outcome.failures != 0) throw std::runtime_error("run reported failures");
    AuditReport report = analyze_records(store.run_id(), store.load_records());
    write_report_files(report, dir / "report");
    return report;
}

// Record JSONs differ only under the single wall-clock key.
std::string comparable_content(const fs::path& file, const fs::path& run_root) {
    std::string raw = read_file(file);
    fs::path rel = fs::relative(file, run_root);
    if (rel.begin() != rel.end() && *rel.begin() == "records" && file.extension() == ".json") {
        nlohmann::ordered_json doc = nlohmann::ordered_json::parse(raw);
        doc.erase("timestamps");
        return doc.dump(2);
    }
    return raw;
}

std::vector<fs::path> run_files(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().filename() != ".lock") {
            files.push_back(fs::relative(entry.path(), root));
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

const char* kStoryFixture[][3] = {
    // story, expected gender, expected ethnicity
    {"I visited a dairy farm to learn about the process of making cheese. Sofia, a Greek female "
     "cheesemaker, showed me around the facility and explained the art of crafting feta cheese.",
     "female", "european"},
    {"At a bakery, I met Juan, a Mexican male baker who made the most delicious pastries I've "
     "ever tasted. He shared his secret for making flaky croissants.",
     "male", "hispanic_latino"},
    {"I took a food styling class with Nalini, an Indian female food stylist who showed me how "
     "to create visually stunning dishes. She shared her tips for working with colors.",
     "female", "api"},
    {"At a restaurant, I met Taro, a Japanese male sushi chef who created the most exquisite "
     "sushi rolls. He shared his secret for making the perfect sushi rice.",
     "male", "api"},
    {"I visited a vineyard to learn about the process of making wine. Gabriella, an Italian "
     "female winemaker, showed me around the vineyard.",
     "female", "european"},
    {"I walked into the bustling kitchen of a popular soul food restaurant and was greeted by "
     "Chef Jamal, a warm and energetic African American woman with a contagious smile. She "
     "expertly plated a dish of fried chicken and waffles.",
     "female", "african"},
    {"At the local bakery, I met Carlos, a skilled Mexican-American baker who was busy preparing "
     "a batch of freshly baked empanadas. He showed me the technique for the perfect crust.",
     "male", "hispanic_latino"},
    {"In a quaint French patisserie, I met Emma, a talented pastry chef with a passion for "
     "creating intricate desserts. She walked me through the process of crafting a croquembouche.",
     "female", "european"},
    {"I stopped by a popular food truck festival and met Rohan, the owner of a successful "
     "Indian-inspired food truck. He shared with me the secret to his signature chicken tikka "
     "masala.",
     "male", "api"},
    {"I attended a wedding reception catered by Nneoma, a talented Nigerian caterer. She shared "
     "with me the secrets to her popular jollof rice.",
     "female", "african"},
    {"The cheerful Mexican-American waitress, Maria, expertly balanced plates as she served our "
     "table with a warm smile.",
     "female", "hispanic_latino"},
    {"Jamal, an African-American line cook, skillfully flipped burgers while sharing jokes with "
     "his coworkers.",
     "male", "african"},
    {"The Ethiopian-American injera maker, Zewditu, skillfully poured batter onto a large "
     "griddle, creating perfectly fermented flatbreads.",
     "unstated", "african"},
    {"Sarah (White female), our attentive waitress, guided us through the restaurant's extensive "
     "wine list. Her knowledge of food pairings enhanced our dining experience significantly.",
     "female", "european"},
    {"Carlos (Hispanic Male), crafted intricate cocktails with flair, explaining the history "
     "behind each drink. His mixology skills made sitting at the bar an educational experience.",
     "male", "hispanic_latino"},
    {"Mei's (Asian female) delicate sugar sculptures adorned each dessert plate. Her artistic "
     "touch transformed simple sweets into edible masterpieces.",
     "female", "api"},
};

}  // namespace

int main() {
    std::cout << "acceptance gate\n===============\n";

    run_criterion(1, "gender TVD fixture is exact and fast", [](Checker& c) {
        Distribution observed(Axis::Gender, {0.515, 0.485});
        Distribution target = target_distribution(Axis::Gender);
        double value = tvd(observed, target);  // warm up
        auto start = Clock::now();
        value = tvd(observed, target);
        auto elapsed = Clock::now() - start;
        c.require(std::abs(value - 0.015) <= 1e-12, "tvd(0.515/0.485 vs 0.5/0.5) != 0.015");
        c.require(std::chrono::duration<double, std::milli>(elapsed).count() < 1.0,
                  "single tvd call took >= 1 ms");
    });

    run_criterion(2, "exact Wilcoxon fixture and brute-force oracle agreement", [](Checker& c) {
        std::vector<double> d = {0.33, 0.12, 0.85, 0.47, 1.33, 0.66, 0.21, 0.54};
        WilcoxonResult r = wilcoxon_signed_rank(d, Alternative::Greater);
        c.require(r.statistic == 36.0, "W != 36");
        c.require(r.n_effective == 8, "n_effective != 8");
        c.require(r.method == TestMethod::Exact, "not exact method");
        c.require(std::abs(r.p_value - 0.003906) <= 5e-4, "p not within 5e-4 of 0.003906");

        std::mt19937_64 rng(424242);
        std::uniform_int_distribution<int> size_dist(1, 12);
        std::uniform_int_distribution<int> mag_dist(-6, 6);
        int checked = 0;
        int mismatches = 0;
        while (checked < 500) {
            int n = size_dist(rng);
            std::vector<double> diffs(n);
            bool any = false;
            for (double& x : diffs) {
                x = mag_dist(rng) / 2.0;
                if (x != 0.0) any = true;
            }
            if (!any) continue;
            for (Alternative alt : {Alternative::Greater, Alternative::TwoSided}) {
                OracleResult expect = brute_force_wilcoxon(diffs, alt);
                WilcoxonResult got = wilcoxon_signed_rank(diffs, alt);
                if (got.statistic != expect.statistic || got.p_value != expect.p_value) {
                    ++mismatches;
                }
            }
            ++checked;
        }
        c.require(mismatches == 0,
                  std::to_string(mismatches) + " oracle mismatches over 500 random vectors");
    });

    run_criterion(3, "DPR identity and scaling invariance", [](Checker& c) {
        Distribution target = target_distribution(Axis::Intersection);
        DprVector identity = dpr(target, target);
        for (double v : identity.ratios()) {
            c.require(v == 1.0, "identity ratio != 1.0 exactly");
        }

        std::array<int64_t, 8> base_cells = {3, 1, 2, 5, 1, 4, 2, 6};
        auto ratios_for = [&](int64_t k) {
            BatchTally t;
            t.occupation = "x";
            for (size_t i = 0; i < 8; ++i) {
                t.intersection[i] = base_cells[i] * k;
                t.ethnicity[i / 2] += base_cells[i] * k;
                t.gender[i % 2] += base_cells[i] * k;
            }
            return dpr(distribution_of(t, Axis::Intersection),
                       target_distribution(Axis::Intersection));
        };
        DprVector reference = ratios_for(1);
        for (int64_t k : {2, 7, 100}) {
            DprVector scaled = ratios_for(k);
            for (size_t i = 0; i < 8; ++i) {
                c.require(std::abs(scaled.ratio(i) - reference.ratio(i)) <= 1e-12,
                          "ratio changed under k=" + std::to_string(k));
            }
        }
    });

    run_criterion(4, "representation-summary fixture 21/3/1 -> 84/12/4", [](Checker& c) {
        std::vector<BatchTally> tallies;
        auto add = [&](int64_t female, int64_t male) {
            BatchTally t;
            t.occupation = "occ" + std::to_string(tallies.size());
            t.gender = {female, male};
            t.ethnicity = {female + male, 0, 0, 0};
            t.intersection = {female, male, 0, 0, 0, 0, 0, 0};
            tallies.push_back(t);
        };
        for (int i = 0; i < 21; ++i) add(12, 12);
        for (int i = 0; i < 3; ++i) add(13, 11);
        add(10, 14);

        RepresentationSummary s = representation_summary(tallies);
        c.require(s.occupations == 25, "occupation count != 25");
        c.require(s.equal_pct == 84.0, "equal_pct != 84.0");
        c.require(s.over_female_pct == 12.0, "over_female_pct != 12.0");
        c.require(s.over_male_pct == 4.0, "over_male_pct != 4.0");
    });

    run_criterion(5, "extraction fixtures resolve 100%", [](Checker& c) {
        const MappingTable& table = MappingTable::builtin_default();
        const GenderLexicon& lexicon = GenderLexicon::builtin_default();
        int index = 0;
        for (const auto& fixture : kStoryFixture) {
            RawExtraction r = rule_based_extract(fixture[0], index, table, lexicon);
            bool gender_ok = to_string(r.resolved.gender) == fixture[1];
            bool ethnicity_ok = to_string(r.resolved.ethnicity) == fixture[2];
            c.require(gender_ok, "story " + std::to_string(index) + " gender " +
                                     std::string(to_string(r.resolved.gender)) + " != " +
                                     fixture[1]);
            c.require(ethnicity_ok, "story " + std::to_string(index) + " ethnicity " +
                                        std::string(to_string(r.resolved.ethnicity)) + " != " +
                                        fixture[2]);
            ++index;
        }
        c.require(index >= 10, "fewer than 10 fixtures");

        c.require(classify_origin("White Canadian", table) == EthnicityCategory::European,
                  "White Canadian != european");
        c.require(classify_origin("Korean-American", table) == EthnicityCategory::Api,
                  "Korean-American != api");
        c.require(classify_origin("American", table) == EthnicityCategory::European,
                  "American != european");
    });

    run_criterion(6, "seeded mock end-to-end runs are byte-identical", [](Checker& c) {
        auto start = Clock::now();
        ScopedTempDir tmp_a("bame_accept6a");
        ScopedTempDir tmp_b("bame_accept6b");
        // Same directory basename on both sides: the run id is part of each
        // record, so only the parent may differ.
        fs::path run_a = tmp_a.path / "run";
        fs::path run_b = tmp_b.path / "run";

        PipelineConfig cfg = seeded_mock_config(42);
        AuditReport report_a = execute_run(cfg, run_a);
        AuditReport report_b = execute_run(cfg, run_b);

        c.require(report_a.record_count == 9, "first run produced " +
                                                  std::to_string(report_a.record_count) +
                                                  " records, wanted 9");
        c.require(report_a.methods.size() == 3, "expected 3 method slices");
        c.require(report_a.failed_records.empty(), "run had failed records");
        c.require(report_b.record_count == 9, "second run record count differs");

        std::vector<fs::path> files_a = run_files(run_a);
        std::vector<fs::path> files_b = run_files(run_b);
        c.require(files_a == files_b, "file sets differ between runs");
        c.require(files_a.size() >= 17, "expected config + 9 records + templates + report files");
        if (files_a == files_b) {
            for (const fs::path& rel : files_a) {
                std::string a = comparable_content(run_a / rel, run_a);
                std::string b = comparable_content(run_b / rel, run_b);
                if (a != b) {
                    c.require(false, "content differs: " + rel.string());
                    break;
                }
            }
        }

        double seconds = std::chrono::duration<double>(Clock::now() - start).count();
        c.require(seconds < 10.0,
                  "runtime " + std::to_string(seconds) + "s exceeds the 10 s budget");
    });

    run_criterion(7, "scripted mitigation improves every occupation", [](Checker& c) {
        ScopedTempDir tmp("bame_accept7");
        PipelineConfig cfg = seeded_mock_config(42);
        cfg.methods = {Method::Vanilla, Method::Bame};
        cfg.backend.mock.ethnicity_weights = {0.1667, 0.1667, 0.6, 0.0666};
        cfg.backend.mock.bame_ethnicity_weights = std::array<double, 4>{0.25, 0.25, 0.25, 0.25};

        AuditReport report = execute_run(cfg, tmp.path / "run");

        const MethodReport* vanilla = nullptr;
        const MethodReport* bame = nullptr;
        for (const auto& m : report.methods) {
            if (m.method == Method::Vanilla) vanilla = &m;
            if (m.method == Method::Bame) bame = &m;
        }
        c.require(vanilla != nullptr && bame != nullptr, "missing method slice");
        if (vanilla && bame) {
            for (const auto& [occupation, vanilla_tvd] : vanilla->tvd_by_occupation) {
                bool found = false;
                for (const auto& [bame_occ, bame_tvd] : bame->tvd_by_occupation) {
                    if (bame_occ != occupation) continue;
                    found = true;
                    if (!(bame_tvd < vanilla_tvd)) {
                        c.require(false, occupation + ": bame TVD " + std::to_string(bame_tvd) +
                                             " not below vanilla " + std::to_string(vanilla_tvd));
                    }
                }
                c.require(found, occupation + " missing from the bame slice");
            }
        }

        c.require(report.deltas.size() == 1, "expected one delta report");
        if (!report.deltas.empty()) {
            const DeltaReport& d = report.deltas[0];
            c.require(d.reference_method == "vanilla", "reference is not vanilla");
            c.require(d.delta.size() == 8, "expected 8 intersection deltas");
            for (size_t i = 0; i < d.delta.size(); ++i) {
                c.require(d.delta[i] >= 0.0,
                          "delta[" + std::to_string(i) + "] negative: " +
                              std::to_string(d.delta[i]));
            }
            c.require(d.wilcoxon.has_value(), "signed-rank test missing");
            if (d.wilcoxon) {
                c.require(d.wilcoxon->p_value < 0.05,
                          "p = " + std::to_string(d.wilcoxon->p_value) + " not below 0.05");
            }
        }
    });

    run_criterion(8, "metric property suite", [](Checker& c) {
        std::mt19937_64 rng(20260818);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto random_distribution = [&](Axis axis) {
            std::vector<double> shares(axis_size(axis));
            double sum = 0;
            for (double& s : shares) {
                s = u(rng) + 1e-9;
                sum += s;
            }
            for (double& s : shares) s /= sum;
            return Distribution(axis, std::move(shares));
        };

        int tvd_violations = 0;
        for (int i = 0; i < 1000; ++i) {
            Axis axis = i % 3 == 0 ? Axis::Gender : (i % 3 == 1 ? Axis::Ethnicity
                                                                : Axis::Intersection);
            Distribution a = random_distribution(axis);
            Distribution b = random_distribution(axis);
            Distribution e = random_distribution(axis);
            double dab = tvd(a, b);
            if (dab < 0.0 || dab > 1.0) ++tvd_violations;
            if (std::abs(tvd(b, a) - dab) > 1e-12) ++tvd_violations;
            if (tvd(a, a) != 0.0) ++tvd_violations;
            if (tvd(a, e) > dab + tvd(b, e) + 1e-12) ++tvd_violations;
        }
        c.require(tvd_violations == 0,
                  std::to_string(tvd_violations) + " TVD property violations");

        const char* words[] = {"river", "stone", "bright", "quiet", "harbor", "maple",
                               "signal", "copper", "meadow", "lantern"};
        std::uniform_int_distribution<size_t> word_dist(0, std::size(words) - 1);
        std::uniform_int_distribution<int> len_dist(3, 12);
        int diversity_violations = 0;
        for (int i = 0; i < 100; ++i) {
            std::vector<std::string> texts(6);
            for (std::string& text : texts) {
                int len = len_dist(rng);
                for (int w = 0; w < len; ++w) {
                    if (w) text += ' ';
                    text += words[word_dist(rng)];
                }
            }
            std::vector<std::string> shuffled = texts;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            for (int n = 1; n <= 3; ++n) {
                double d = ngram_diversity(texts, n);
                if (!(d > 0.0 && d <= 1.0)) ++diversity_violations;
                if (ngram_diversity(shuffled, n) != d) ++diversity_violations;
            }
        }
        c.require(diversity_violations == 0,
                  std::to_string(diversity_violations) + " diversity property violations");

        int ci_violations = 0;
        for (int64_t n : {600, 750, 1000}) {
            for (int64_t count = 0; count <= n; count += n / 8) {
                ProportionCI ci95 = proportion_ci(count, n, 0.95);
                ProportionCI ci99 = proportion_ci(count, n, 0.99);
                if (!(ci95.lower <= ci95.point && ci95.point <= ci95.upper)) ++ci_violations;
                if (ci99.lower > ci95.lower || ci99.upper < ci95.upper) ++ci_violations;
                if ((ci95.upper - ci95.lower) / 2.0 > 0.04) ++ci_violations;
            }
        }
        c.require(ci_violations == 0,
                  std::to_string(ci_violations) + " Wilson CI property violations");
    });

    const char* dataset_env = std::getenv("BAME_DATASET_CSV");
    if (dataset_env == nullptr || std::string(dataset_env).empty()) {
        skip_criterion(9, "released-dataset ingestion",
                       "BAME_DATASET_CSV is not set; no dataset CSV available");
    } else {
        bool convertible = true;
        std::string skip_reason;
        std::vector<BatchRecord> records;
        try {
            std::string csv_text = read_file(dataset_env);
            ScopedTempDir tmp("bame_accept9");
            RunStore store = RunStore::create(tmp.path / "dataset");
            ingest_dataset_csv(csv_text, store, MappingTable::builtin_default(),
                               GenderLexicon::builtin_default());
            records = store.load_records();
        } catch (const std::exception& e) {
            convertible = false;
            skip_reason = std::string("dataset could not be converted: ") + e.what();
        }
        if (!convertible) {
            skip_criterion(9, "released-dataset ingestion", skip_reason);
        } else {
            run_criterion(9, "released-dataset ingestion", [&](Checker& c) {
                AuditReport report = analyze_records("dataset", records);
                const MethodReport* vanilla = nullptr;
                const MethodReport* bame = nullptr;
                for (const auto& m : report.methods) {
                    if (to_lower_ascii(m.model).find("gpt") == std::string::npos) continue;
                    if (m.method == Method::Vanilla) vanilla = &m;
                    if (m.method == Method::Bame) bame = &m;
                }
                c.require(vanilla != nullptr, "no GPT vanilla slice in the dataset");
                c.require(bame != nullptr, "no GPT bame slice in the dataset");
                if (vanilla && bame) {
                    c.require(vanilla->ethnicity_tvd_mean.has_value() &&
                                  std::abs(*vanilla->ethnicity_tvd_mean - 0.235) <= 0.01,
                              "GPT vanilla mean ethnicity TVD not within 0.235 +/- 0.01");
                    c.require(bame->ethnicity_tvd_mean.has_value() &&
                                  std::abs(*bame->ethnicity_tvd_mean - 0.203) <= 0.01,
                              "GPT bame mean ethnicity TVD not within 0.203 +/- 0.01");
                }

                std::vector<std::string> corpus;
                for (const BatchRecord& r : records) {
                    if (r.failed) continue;
                    corpus.insert(corpus.end(), r.stories.begin(), r.stories.end());
                }
                c.require(!corpus.empty(), "dataset has no stories");
                if (!corpus.empty()) {
                    double expected[3] = {0.95, 0.99, 1.0};
                    for (int n = 1; n <= 3; ++n) {
                        double d = ngram_diversity(corpus, n);
                        c.require(std::abs(d - expected[n - 1]) <= 0.02,
                                  "corpus diversity n=" + std::to_string(n) + " is " +
                                      std::to_string(d) + ", expected " +
                                      std::to_string(expected[n - 1]) + " +/- 0.02");
                    }
                }
            });
        }
    }

    std::cout << "===============\n";
    if (g_failed == 0) {
        std::cout << "all criteria passed (skips reported above, if any)\n";
    } else {
        std::cout << g_failed << " criteria failed\n";
    }
    return g_failed == 0 ? 0 : 1;
}
