#include "fairstep/bundle.hpp"
#include "fairstep/error.hpp"
#include "fairstep/serialize.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace fairstep;
using nlohmann::json;

TEST_CASE("formula, pool and policy documents round-trip")
{
    auto f = parse_formula(read_json_file(fixtures::scenario("baseline.json")));
    CHECK(f.variables.front() == VariableId::intercept());
    CHECK(parse_formula(to_json(f)) == f);
    CHECK_NOTHROW(validate_formula(f, AgeBanding{}, true));

    auto pool = parse_pool(read_json_file(fixtures::scenario("pool.json")));
    REQUIRE(pool.size() == 4);
    CHECK(pool[0].variables == std::vector<VariableId>{VariableId::hcc("HCC057"), VariableId::hcc("HCC059")});
    CHECK(to_json(parse_pool(to_json(pool))) == to_json(pool));
    CHECK(parse_pool(json{{"blocks", to_json(pool)}}).size() == 4);

    for (const char* name : {"max_r2.json", "net_comp.json", "p_value_then_r2.json"}) {
        auto p = parse_policy(read_json_file(fixtures::scenario(std::string("policies/") + name)));
        CHECK_NOTHROW(p.validate());
        CHECK(to_json(parse_policy(to_json(p))) == to_json(p));
    }
    auto cv = parse_policy(json::parse(
        R"({"name":"cv","objective":{"type":"max_r2","min_gain":0.01},"evaluation":{"mode":"cross_validated","folds":5,"seed":3}})"));
    CHECK(cv.evaluation == EvaluationMode::cross_validated(5, 3));

    CHECK_THROWS_AS(parse_policy(json::parse(R"({"name":"x","objective":{"type":"bogus"}})")), ConfigError);
    CHECK_THROWS_AS(parse_formula(json::parse(R"([{"kind":"hcc"}])")), ConfigError);
    CHECK_THROWS_AS(read_json_file(fixtures::fixture("missing.json")), ConfigError);
}

TEST_CASE("trace exports")
{
    DecisionTrace t{"p", Formula{{VariableId::intercept()}}, {}};
    TraceEntry e;
    e.action = {StepKind::Add, {VariableId::hcc("HCC057")}, "mh"};
    e.accepted = true;
    e.reason = "r2 gain, \"quoted\"";
    t.entries.push_back(e);
    auto back = parse_trace(to_json(t));
    CHECK(back.policy_name == "p");
    CHECK(back.entries.size() == 1);
    CHECK(back.entries[0].action.same_as(e.action));
    CHECK(back.entries[0].accepted);

    std::ostringstream csv, dot;
    write_trace_csv(csv, t);
    write_trace_dot(dot, t);
    CHECK(csv.str().find("HCC057") != std::string::npos);
    CHECK(dot.str().rfind("digraph", 0) == 0);
}

TEST_CASE("bundles")
{
    auto out = fixtures::scratch("io-bundle");
    auto b = create_bundle(fixtures::fixture("exclusions_10.csv"), fixtures::toy_map_files(), out,
                           fixtures::data("groups/default.json"));
    CHECK(b.records.size() == 7);
    CHECK(b.manifest.at("enrollee_count") == 7);
    CHECK(b.manifest.at("version") == kBundleFormatVersion);
    auto loaded = load_bundle(out);
    CHECK(loaded.records == b.records);
    CHECK(loaded.groups.size() == 3);
    CHECK(loaded.exclusions.removed_by_reason == b.exclusions.removed_by_reason);

    SUBCASE("tampered bundle is rejected")
    {
        std::ofstream(out / "enrollees.csv", std::ios::app) << "zz,30,F,NE,\"\",1\n";
        CHECK_THROWS_AS(load_bundle(out), Error);
    }
    SUBCASE("unmapped codes are rejected at ingest")
    {
        auto bad = fixtures::scratch("bad-input");
        std::ofstream(bad / "e.csv") << "person_id,age,sex,region,diagnosis_codes,spend_total\np,30,F,NE,\"Q99\",1\n";
        CHECK_THROWS_AS(create_bundle(bad / "e.csv", fixtures::toy_map_files(), bad / "out"), ConfigError);
    }
    SUBCASE("malformed CSV is an ingest error")
    {
        CHECK_THROWS_AS(create_bundle(fixtures::fixture("corrupted.csv"), fixtures::toy_map_files(),
                                      fixtures::scratch("corrupt")),
                        IngestError);
    }
}
