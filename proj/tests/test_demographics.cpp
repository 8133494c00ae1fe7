#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <set>
#include <sstream>

#include "bame/demographics.hpp"

using namespace bame;

namespace {

EthnicityCategory classify(std::string_view text) {
    return classify_origin(text, MappingTable::builtin_default());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("enum names round-trip") {
    CHECK(to_string(Gender::Female) == "female");
    CHECK(to_string(Gender::Male) == "male");
    CHECK(to_string(Gender::Unstated) == "unstated");
    CHECK(gender_from_string("female") == Gender::Female);
    CHECK(gender_from_string("male") == Gender::Male);
    CHECK(gender_from_string("unstated") == Gender::Unstated);
    CHECK_THROWS_AS(gender_from_string("robot"), ConfigError);

    for (EthnicityCategory e : {EthnicityCategory::European, EthnicityCategory::African,
                                EthnicityCategory::Api, EthnicityCategory::HispanicLatino,
                                EthnicityCategory::Unclassified}) {
        CHECK(ethnicity_from_string(std::string(to_string(e))) == e);
    }
    CHECK_THROWS_AS(ethnicity_from_string(""), ConfigError);
}

TEST_CASE("tokenize splits on non-alphanumerics and lowercases") {
    auto tokens = tokenize("Korean-American, she said.");
    REQUIRE(tokens.size() == 4);
    CHECK(tokens[0].text == "korean");
    CHECK(tokens[1].text == "american");
    CHECK(tokens[2].text == "she");
    CHECK(tokens[3].text == "said");
    CHECK(tokens[0].begin == 0);
    CHECK(tokens[0].end == 6);
    CHECK(tokenize("").empty());
    CHECK(tokenize("  ,;  ").empty());
}

TEST_CASE("normalize_phrase collapses separators") {
    CHECK(normalize_phrase("  Korean--American ") == "korean american");
    CHECK(normalize_phrase("WHITE") == "white");
    CHECK(normalize_phrase("") == "");
}

TEST_CASE("descriptor classification") {
    CHECK(classify("White") == EthnicityCategory::European);
    CHECK(classify("Caucasian") == EthnicityCategory::European);
    CHECK(classify("Black") == EthnicityCategory::African);
    CHECK(classify("African") == EthnicityCategory::African);
    CHECK(classify("Asian") == EthnicityCategory::Api);
    CHECK(classify("Pacific Islander") == EthnicityCategory::Api);
    CHECK(classify("Middle Eastern") == EthnicityCategory::Api);
    CHECK(classify("Arab") == EthnicityCategory::Api);
    CHECK(classify("Hispanic") == EthnicityCategory::HispanicLatino);
    CHECK(classify("Latina") == EthnicityCategory::HispanicLatino);
}

TEST_CASE("composite and nationality classification") {
    CHECK(classify("White Canadian") == EthnicityCategory::European);
    CHECK(classify("Korean-American") == EthnicityCategory::Api);
    CHECK(classify("Korean American") == EthnicityCategory::Api);
    CHECK(classify("American") == EthnicityCategory::European);
    CHECK(classify("African American") == EthnicityCategory::African);
    CHECK(classify("African-American") == EthnicityCategory::African);
    CHECK(classify("Mexican American") == EthnicityCategory::HispanicLatino);
    CHECK(classify("Ethiopian-American") == EthnicityCategory::African);
    CHECK(classify("Nigerian") == EthnicityCategory::African);
    CHECK(classify("Japanese") == EthnicityCategory::Api);
    CHECK(classify("Indian") == EthnicityCategory::Api);
    CHECK(classify("Greek") == EthnicityCategory::European);
    CHECK(classify("Italian") == EthnicityCategory::European);
    CHECK(classify("Mexican") == EthnicityCategory::HispanicLatino);
    CHECK(classify("Puerto Rican") == EthnicityCategory::HispanicLatino);
    CHECK(classify("Russian") == EthnicityCategory::European);
    CHECK(classify("Turkish") == EthnicityCategory::Api);
    CHECK(classify("Egyptian") == EthnicityCategory::African);
    CHECK(classify("Brazilian") == EthnicityCategory::HispanicLatino);
}

TEST_CASE("unmappable origins come back Unclassified") {
    CHECK(classify("") == EthnicityCategory::Unclassified);
    CHECK(classify("Martian") == EthnicityCategory::Unclassified);
    CHECK(classify("Jewish") == EthnicityCategory::Unclassified);
    // Whole-word only: no substring hits.
    CHECK(classify("hispanish") == EthnicityCategory::Unclassified);
    CHECK(classify("thaïs") == EthnicityCategory::Unclassified);
}

TEST_CASE("priority beats position, position breaks priority ties") {
    // "canadian" (nationality, priority 1) appears first, "black"
    // (descriptor, priority 3) later; the descriptor wins.
    CHECK(classify("Black Canadian") == EthnicityCategory::African);
    CHECK(classify("Canadian trader who is Black") == EthnicityCategory::African);
    // Equal priority: earliest mention wins.
    CHECK(classify("German and Nigerian") == EthnicityCategory::European);
    CHECK(classify("Nigerian and German") == EthnicityCategory::African);
}

TEST_CASE("longer pattern beats shorter at equal priority") {
    const auto& table = MappingTable::builtin_default();
    auto tokens = tokenize("a Latin American artist");
    auto best = table.best_match(tokens);
    REQUIRE(best.has_value());
    CHECK(table.entries()[best->entry_index].pattern == "latin american");
    CHECK(best->token_count == 2);
    CHECK(table.category_of(*best) == EthnicityCategory::HispanicLatino);
}

TEST_CASE("best_match vs first_match disagree when a later match outranks") {
    const auto& table = MappingTable::builtin_default();
    auto tokens = tokenize("the Canadian was Black");

    auto first = table.first_match(tokens);
    REQUIRE(first.has_value());
    CHECK(table.entries()[first->entry_index].pattern == "canadian");
    CHECK(first->token_begin == 1);

    auto best = table.best_match(tokens);
    REQUIRE(best.has_value());
    CHECK(table.entries()[best->entry_index].pattern == "black");
}

TEST_CASE("first_match prefers longer pattern at same position") {
    const auto& table = MappingTable::builtin_default();
    auto tokens = tokenize("an African American nurse");
    auto first = table.first_match(tokens);
    REQUIRE(first.has_value());
    CHECK(table.entries()[first->entry_index].pattern == "african american");
    CHECK(first->token_count == 2);
}

TEST_CASE("no match on empty token streams") {
    const auto& table = MappingTable::builtin_default();
    std::vector<Token> empty;
    CHECK_FALSE(table.best_match(empty).has_value());
    CHECK_FALSE(table.first_match(empty).has_value());
}

TEST_CASE("from_document parses and validates") {
    MappingTable t = MappingTable::from_document(
        "# comment\n"
        "\n"
        "elvish\teuropean\t2\n"
        "deep elvish\tapi\t3\n");
    REQUIRE(t.entries().size() == 2);
    CHECK(classify_origin("a Deep Elvish smith", t) == EthnicityCategory::Api);
    CHECK(classify_origin("Elvish", t) == EthnicityCategory::European);

    CHECK_THROWS_AS(MappingTable::from_document("x\tnot_a_category\t1\n"), ConfigError);
    CHECK_THROWS_AS(MappingTable::from_document("x\teuropean\n"), ConfigError);
    CHECK_THROWS_AS(MappingTable::from_document("x\teuropean\tbanana\n"), ConfigError);
    CHECK_THROWS_AS(MappingTable::from_document("x\teuropean\t1\nx\tapi\t2\n"), ConfigError);
    CHECK_THROWS_AS(MappingTable::from_document("\teuropean\t1\n"), ConfigError);

    // Parse errors carry the line number.
    try {
        MappingTable::from_document("ok\teuropean\t1\nbad line\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
}

TEST_CASE("builtin document round-trips through from_document") {
    MappingTable parsed = MappingTable::from_document(MappingTable::builtin_default_document());
    const auto& builtin = MappingTable::builtin_default();
    REQUIRE(parsed.entries().size() == builtin.entries().size());
    for (size_t i = 0; i < parsed.entries().size(); ++i) {
        CHECK(parsed.entries()[i].pattern == builtin.entries()[i].pattern);
        CHECK(parsed.entries()[i].category == builtin.entries()[i].category);
        CHECK(parsed.entries()[i].priority == builtin.entries()[i].priority);
    }
}

TEST_CASE("builtin table has no duplicate patterns") {
    std::set<std::string> seen;
    for (const auto& e : MappingTable::builtin_default().entries()) {
        CHECK(seen.insert(e.pattern).second);
    }
    CHECK(seen.size() > 100);
}

TEST_CASE("data file matches the builtin table document") {
    std::string on_disk = read_file(std::string(BAME_SOURCE_DIR) + "/data/mapping_table.tsv");
    CHECK(on_disk == MappingTable::builtin_default_document());
}

TEST_CASE("intersection keys") {
    const auto& keys = all_intersection_keys();
    REQUIRE(keys.size() == 8);
    std::set<std::string> names;
    for (const auto& k : keys) names.insert(intersection_name(k));
    CHECK(names.size() == 8);
    CHECK(names.count("european_female") == 1);
    CHECK(names.count("hispanic_latino_male") == 1);

    for (size_t i = 0; i < keys.size(); ++i) {
        CHECK(intersection_index(keys[i].gender, keys[i].ethnicity) == i);
        CHECK(intersection_key(keys[i].gender, keys[i].ethnicity) == keys[i]);
    }

    CHECK_THROWS_AS(intersection_index(Gender::Unstated, EthnicityCategory::European),
                    std::invalid_argument);
    CHECK_THROWS_AS(intersection_key(Gender::Female, EthnicityCategory::Unclassified),
                    std::invalid_argument);
}

TEST_CASE("DemographicLabel::classified") {
    DemographicLabel l;
    CHECK_FALSE(l.classified());
    l.gender = Gender::Female;
    CHECK_FALSE(l.classified());
    l.ethnicity = EthnicityCategory::Api;
    CHECK(l.classified());
}
