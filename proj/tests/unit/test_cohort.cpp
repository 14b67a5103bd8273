#include "fairstep/cohort.hpp"
#include "fairstep/error.hpp"

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace fairstep;
using fixtures::person;

namespace {

CodeMaps maps_from(const std::string& hcc, const std::string& ccs, const std::string& hier)
{
    std::istringstream h(hcc), c(ccs), r(hier);
    return load_code_maps(h, c, r);
}

} // namespace

TEST_CASE("load_enrollees parses a quoted code list")
{
    std::istringstream in("person_id,age,sex,region,diagnosis_codes,spend_total\np1,37,F,NE,\"F329;E119\",5400.00\n");
    auto table = load_enrollees(in);
    REQUIRE(table.records.size() == 1);
    const auto& r = table.records[0];
    CHECK(r.person_id == "p1");
    CHECK(r.age == 37);
    CHECK(r.sex == Sex::Female);
    CHECK(r.region == std::optional<std::string>("NE"));
    CHECK(r.diagnosis_codes.size() == 2);
    CHECK(r.spend_total == std::optional<double>(5400.0));
}

TEST_CASE("load_enrollees reports the failing row and field")
{
    std::istringstream in("person_id,age,sex,region,diagnosis_codes,spend_total\np1,37,F,NE,\"\",1\np2,40,M,S,\"\",abc\n");
    try {
        load_enrollees(in, "spend.csv");
        FAIL("expected an ingest error");
    } catch (const IngestError& e) {
        CHECK(e.line() == 3);
        CHECK(e.field() == "spend_total");
    }
}

TEST_CASE("load_enrollees rejects duplicates, bad sex, bad age and stray quotes")
{
    auto fails = [](const std::string& body) {
        std::istringstream in("person_id,age,sex,region,diagnosis_codes,spend_total\n" + body);
        CHECK_THROWS_AS(load_enrollees(in), IngestError);
    };
    fails("p1,30,F,NE,\"\",1\np1,31,M,NE,\"\",2\n");
    fails("p1,30,X,NE,\"\",1\n");
    fails("p1,130,F,NE,\"\",1\n");
    fails("p1,thirty,F,NE,\"\",1\n");
    fails("p1,30,F,\"NE,\"\",1\n");
}

TEST_CASE("three-row fixture yields code-set sizes 2, 0, 1")
{
    auto table = load_enrollees(fixtures::fixture("enrollees_3.csv"));
    REQUIRE(table.records.size() == 3);
    CHECK(table.records[0].diagnosis_codes.size() == 2);
    CHECK(table.records[1].diagnosis_codes.size() == 0);
    CHECK(table.records[2].diagnosis_codes.size() == 1);
}

TEST_CASE("CRLF input and a missing region column are accepted")
{
    std::istringstream in("person_id,age,sex,diagnosis_codes,spend_total\r\np1,30,M,\"I10\",10\r\n");
    auto table = load_enrollees(in);
    CHECK_FALSE(table.region_declared);
    REQUIRE(table.records.size() == 1);
    CHECK_FALSE(table.records[0].region.has_value());
    auto ex = apply_exclusions(table.records, table.region_declared);
    CHECK(ex.kept.size() == 1);
}

TEST_CASE("write_enrollees round-trips")
{
    std::vector<EnrolleeRecord> recs{person("a", 30, Sex::Female, {"I10", "E11.9"}, 12.5),
                                     person("b,c", 44, Sex::Male, {}, 0.0, "S")};
    std::ostringstream out;
    write_enrollees(out, recs);
    std::istringstream in(out.str());
    CHECK(load_enrollees(in).records == recs);
}

TEST_CASE("apply_exclusions")
{
    SUBCASE("negative claims")
    {
        std::vector<EnrolleeRecord> recs{person("a", 30, Sex::Female, {}, 10.0), person("b", 31, Sex::Male, {}, -12.5)};
        auto ex = apply_exclusions(recs);
        CHECK(ex.kept.size() == 1);
        CHECK(ex.report.removed_by_reason.at("negative_claims") == 1);
    }
    SUBCASE("all valid is the identity")
    {
        std::vector<EnrolleeRecord> recs{person("a", 30, Sex::Female, {}, 10.0), person("b", 31, Sex::Male, {}, 0.0)};
        auto ex = apply_exclusions(recs);
        CHECK(ex.kept == recs);
        CHECK(ex.report.removed_by_reason.empty());
    }
    SUBCASE("ten-record fixture keeps seven, in order, idempotently")
    {
        auto table = load_enrollees(fixtures::fixture("exclusions_10.csv"));
        auto ex = apply_exclusions(table.records);
        REQUIRE(ex.kept.size() == 7);
        CHECK(ex.report.removed_by_reason.at("missing_region") == 2);
        CHECK(ex.report.removed_by_reason.at("negative_claims") == 1);
        CHECK(ex.report.input_count - ex.report.kept_count == 3);
        CHECK(ex.kept.front().person_id == "a1");
        CHECK(ex.kept.back().person_id == "a10");
        CHECK(apply_exclusions(ex.kept).kept == ex.kept);
    }
    SUBCASE("missing spend")
    {
        auto r = person("a", 30, Sex::Female, {}, 0.0);
        r.spend_total.reset();
        CHECK(apply_exclusions({r}).report.removed_by_reason.at("missing_claims") == 1);
    }
}

TEST_CASE("assign_hccs")
{
    SUBCASE("single mapping")
    {
        auto maps = maps_from("icd,hcc\nd1,HCC_A\n", "icd,ccs\nd1,5\n", "dominant_hcc,suppressed_hcc\n");
        CHECK(assign_hccs(person("p", 30, Sex::Male, {"d1"}, 0), maps) == std::set<std::string>{"HCC_A"});
    }
    SUBCASE("rule application")
    {
        auto maps = maps_from("icd,hcc\nd1,HCC_severe\nd2,HCC_mild\n", "icd,ccs\nd1,5\nd2,5\n",
                              "dominant_hcc,suppressed_hcc\nHCC_severe,HCC_mild\n");
        CHECK(assign_hccs(person("p", 30, Sex::Male, {"d1", "d2"}, 0), maps) == std::set<std::string>{"HCC_severe"});
    }
    SUBCASE("chained rules against a brute-force fixed point")
    {
        std::string hcc = "icd,hcc\n", ccs = "icd,ccs\n";
        for (int i = 0; i < 20; ++i) {
            hcc += "c" + std::to_string(i) + ",H" + std::to_string(i % 8) + "\n";
            ccs += "c" + std::to_string(i) + "," + std::to_string(100 + i % 5) + "\n";
        }
        auto maps = maps_from(hcc, ccs, "dominant_hcc,suppressed_hcc\nH0,H1\nH1,H2\nH3,H4\nH4,H5\n");
        std::mt19937_64 rng(99);
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<std::string> codes;
            for (int k = 0; k < 6; ++k) codes.push_back("c" + std::to_string(rng() % 20));
            auto r = person("p", 30, Sex::Male, codes, 0);
            auto got = assign_hccs(r, maps);
            CHECK(got == oracle::hierarchy_filter(raw_hccs(r, maps), maps.hierarchies));
            CHECK(got.size() <= r.diagnosis_codes.size());
            for (const auto& h : got) CHECK(raw_hccs(r, maps).count(h));
        }
    }
    SUBCASE("unmapped ICDs contribute nothing")
    {
        CHECK(assign_hccs(person("p", 30, Sex::Male, {"I10", "F29"}, 0), fixtures::toy_maps()).empty());
    }
}

TEST_CASE("assign_ccs")
{
    auto maps = maps_from("icd,hcc\n", "icd,ccs\nd1,5\nd2,5\nd3,7\nd4,9\nd5,9\n", "dominant_hcc,suppressed_hcc\n");
    CHECK(assign_ccs(person("p", 30, Sex::Male, {"d1", "d2"}, 0), maps) == std::set<std::string>{"5"});
    CHECK(assign_ccs(person("p", 30, Sex::Male, {}, 0), maps).empty());
    CHECK(assign_ccs(person("p", 30, Sex::Male, {"d1", "d3", "d4", "d5"}, 0), maps).size() == 3);
    try {
        assign_ccs(person("p", 30, Sex::Male, {"zz9"}, 0), maps);
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("zz9") != std::string::npos);
    }
}

TEST_CASE("code map validation")
{
    CHECK_THROWS_AS(maps_from("icd,hcc\nd1,H1\n", "icd,ccs\nd2,5\n", "dominant_hcc,suppressed_hcc\n"), ConfigError);
    CHECK_THROWS_AS(maps_from("icd,hcc\nd1,H1\n", "icd,ccs\nd1,5\n", "dominant_hcc,suppressed_hcc\nH1,H1\n"),
                    ConfigError);
    CHECK_THROWS_AS(maps_from("icd,hcc\nd1,H1\nd2,H2\n", "icd,ccs\nd1,5\nd2,5\n",
                              "dominant_hcc,suppressed_hcc\nH1,H2\nH2,H1\n"),
                    ConfigError);
    CHECK_THROWS_AS(maps_from("icd,hcc\nd1,H1\n", "icd,ccs\nd1,5\n", "dominant_hcc,suppressed_hcc\nH1,H9\n"),
                    ConfigError);
    CHECK_NOTHROW(fixtures::toy_maps().validate());
}

TEST_CASE("group_membership")
{
    auto maps = maps_from("icd,hcc\n", "icd,ccs\nd1,5\nd2,6\n", "dominant_hcc,suppressed_hcc\n");
    GroupDefinition g{"g", {"5"}};
    std::vector<EnrolleeRecord> recs{person("a", 30, Sex::Male, {"d1"}, 0), person("b", 30, Sex::Male, {"d2"}, 0)};
    CHECK(group_membership(recs, g, maps) == std::vector<bool>{true, false});
    CHECK(group_membership(recs, GroupDefinition{"none", {"77"}}, maps) == std::vector<bool>{false, false});
    CHECK_THROWS(group_membership({}, g, maps));
}

TEST_CASE("group membership follows the generating labels and ignores code order")
{
    const auto& maps = fixtures::toy_maps();
    const GroupDefinition& mhsud = fixtures::toy_groups().front();
    std::mt19937_64 rng(5);
    const std::vector<std::string> group_codes{"F20.9", "F29", "F33.1", "F32.9", "F10.259", "F10.10", "F11.20", "F11.10"};
    const std::vector<std::string> other_codes{"E11.9", "I50.9", "I10", "J44.9", "Z00.00", "F41.1", "N18.4"};
    std::vector<EnrolleeRecord> recs;
    std::vector<bool> labels;
    for (int i = 0; i < 50; ++i) {
        bool member = i % 7 == 3;
        std::vector<std::string> codes;
        codes.push_back(other_codes[rng() % other_codes.size()]);
        if (member) codes.push_back(group_codes[rng() % group_codes.size()]);
        recs.push_back(person("p" + std::to_string(i), 30, Sex::Female, codes, 1.0));
        labels.push_back(member);
    }
    auto got = group_membership(recs, mhsud, maps);
    CHECK(got == labels);
    CHECK(std::count(got.begin(), got.end(), true) == 7);
    for (auto& r : recs) std::reverse(r.diagnosis_codes.begin(), r.diagnosis_codes.end());
    CHECK(group_membership(recs, mhsud, maps) == labels);
}

TEST_CASE("the CCS-defined group contains the HCC-recognized group on the toy maps")
{
    const auto& maps = fixtures::toy_maps();
    const GroupDefinition& mhsud = fixtures::toy_groups().front();
    auto relevant = group_relevant_hccs(mhsud, maps);
    CHECK(relevant == std::set<std::string>{"HCC054", "HCC055", "HCC057", "HCC059"});
    std::vector<std::string> all;
    for (const auto& [icd, ccs] : maps.icd_to_ccs) all.push_back(icd);
    std::sort(all.begin(), all.end());
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> codes;
        for (int k = 0; k < 3; ++k) codes.push_back(all[rng() % all.size()]);
        auto r = person("p", 40, Sex::Male, codes, 0);
        bool recognized = false;
        for (const auto& h : assign_hccs(r, maps)) recognized = recognized || relevant.count(h);
        if (recognized) CHECK(group_membership({r}, mhsud, maps)[0]);
    }
}

TEST_CASE("group definitions parse and validate")
{
    auto g = parse_group_definitions(R"({"group_id":"x","ccs_categories":["657", 659]})");
    REQUIRE(g.size() == 1);
    CHECK(g[0].ccs_categories == std::set<std::string>{"657", "659"});
    CHECK_THROWS_AS(parse_group_definitions(R"({"group_id":"x","ccs_categories":[]})"), ConfigError);
    CHECK_THROWS_AS(validate_groups({GroupDefinition{"x", {"99999"}}}, fixtures::toy_maps()), ConfigError);
}
