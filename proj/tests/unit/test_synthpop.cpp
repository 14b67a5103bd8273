#include "fairstep/error.hpp"
#include "fairstep/ols.hpp"
#include "fairstep/rng.hpp"
#include "fairstep/serialize.hpp"
#include "fairstep/synthpop.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace fairstep;

namespace {

SyntheticSpec shipped(std::size_t n, std::uint64_t seed)
{
    auto spec = load_synthetic_spec(fixtures::scenario("spec.json"));
    spec.n = n;
    spec.seed = seed;
    return spec;
}

Formula baseline()
{
    return parse_formula(read_json_file(fixtures::scenario("baseline.json")));
}

double coefficient(const std::vector<EnrolleeRecord>& recs, const Formula& f, const std::string& hcc)
{
    auto x = build_design(recs, f, fixtures::toy_maps());
    auto r = fit(x, spend_vector(recs));
    return r.estimate(VariableId::hcc(hcc))->coefficient;
}

} // namespace

TEST_CASE("spec parsing and validation")
{
    auto spec = load_synthetic_spec(fixtures::scenario("spec.json"));
    CHECK(spec.n == 200000);
    CHECK(parse_synthetic_spec(to_json(spec)) == spec);
    CHECK_NOTHROW(validate_spec(spec, &fixtures::toy_maps()));

    auto unmapped = spec;
    unmapped.conditions[0].emits = {"Q99.9"};
    CHECK_THROWS_AS(validate_spec(unmapped, &fixtures::toy_maps()), ConfigError);
    auto unpaid = spec;
    unpaid.conditions[0].emits = {"I10"};
    CHECK_THROWS_AS(validate_spec(unpaid, &fixtures::toy_maps()), ConfigError);
    auto bad = spec;
    bad.conditions[0].prevalence = 1.5;
    CHECK_THROWS_AS(validate_spec(bad), ConfigError);
}

TEST_CASE("all prevalences zero leaves only the base draw")
{
    auto spec = shipped(2000, 123);
    for (auto& c : spec.conditions) c.prevalence = 0.0;
    auto recs = generate(spec);
    REQUIRE(recs.size() == 2000);
    double log_sum = 0.0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(recs[i].diagnosis_codes.empty());
        SplitMix64 rng(derive_seed(spec.seed, i));
        rng.below(static_cast<std::uint64_t>(spec.age_max - spec.age_min + 1));
        rng.uniform();
        rng.below(spec.regions.size());
        double base = std::exp(spec.base_spend.mu + spec.base_spend.sigma * rng.normal());
        CHECK(*recs[i].spend_total == doctest::Approx(std::round(base * 100.0) / 100.0).epsilon(1e-12));
        CHECK(recs[i].age >= 18);
        CHECK(recs[i].age <= 64);
        log_sum += std::log(*recs[i].spend_total);
    }
    CHECK(std::abs(log_sum / 2000 - spec.base_spend.mu) < 4 * spec.base_spend.sigma / std::sqrt(2000.0));
}

TEST_CASE("generation is deterministic and shard-invariant")
{
    auto spec = shipped(5000, 42);
    auto a = generate(spec, 1);
    CHECK(a == generate(spec, 1));
    CHECK(a == generate(spec, 4));
    auto head = generate_range(spec, 0, 1700);
    auto tail = generate_range(spec, 1700, 5000);
    head.insert(head.end(), tail.begin(), tail.end());
    CHECK(a == head);
    spec.seed = 43;
    CHECK(a != generate(spec, 1));

    std::ostringstream out;
    write_population(shipped(5000, 42), out, 777);
    std::istringstream in(out.str());
    CHECK(load_enrollees(in).records == a);
}

TEST_CASE("tune: doubling the overall mean shifts base mu by ln 2")
{
    auto spec = shipped(20000, 5);
    for (auto& c : spec.conditions) c.prevalence = 0.0;
    const auto& maps = fixtures::toy_maps();
    auto recs = generate(spec);
    auto before = calibration_report(recs, maps, {}, baseline());
    CalibrationTargets t;
    double target = 2.0 * before.overall_mean;
    t.overall_mean = Band{target * 0.999, target * 1.001};
    auto result = tune(spec, t, maps, {}, baseline(), 1);
    CHECK(result.spec.base_spend.mu - spec.base_spend.mu == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    auto after = calibration_report(generate(result.spec), maps, {}, baseline());
    CHECK(after.overall_mean / before.overall_mean == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("tune: satisfied targets return the spec unchanged")
{
    auto spec = shipped(20000, 6);
    const auto& maps = fixtures::toy_maps();
    auto summary = calibration_report(generate(spec), maps, fixtures::toy_groups(), baseline());
    const auto* g = summary.group("mhsud");
    REQUIRE(g);
    CalibrationTargets t;
    t.group_id = "mhsud";
    t.prevalence = Band{g->prevalence - 0.01, g->prevalence + 0.01};
    t.overall_mean = Band{summary.overall_mean * 0.9, summary.overall_mean * 1.1};
    t.mean_ratio = Band{g->mean_ratio - 0.1, g->mean_ratio + 0.1};
    auto result = tune(spec, t, maps, fixtures::toy_groups(), baseline(), 5);
    CHECK(result.converged);
    CHECK(result.failures.empty());
    CHECK(result.spec == spec);
}

TEST_CASE("tune reports unreachable targets")
{
    auto spec = shipped(5000, 6);
    CalibrationTargets t;
    t.group_id = "mhsud";
    t.overall_mean = Band{1.0, 2.0};
    auto result = tune(spec, t, fixtures::toy_maps(), fixtures::toy_groups(), baseline(), 3);
    CHECK_FALSE(result.converged);
    CHECK_FALSE(result.failures.empty());
}

TEST_CASE("undercompensation comes from coded but unpayable diagnoses")
{
    auto spec = shipped(60000, 7);
    const auto& maps = fixtures::toy_maps();
    Formula full = baseline();
    for (const char* h : {"HCC054", "HCC055", "HCC057", "HCC059"}) full.variables.push_back(VariableId::hcc(h));

    auto shipped_summary = calibration_report(generate(spec), maps, fixtures::toy_groups(), baseline());
    CHECK(shipped_summary.group("mhsud")->net_compensation_fraction < -0.1);

    spec.unrecognized_fraction = 0.0;
    auto summary = calibration_report(generate(spec), maps, fixtures::toy_groups(), full);
    CHECK(std::abs(summary.group("mhsud")->net_compensation_fraction) < 0.10);
}

TEST_CASE("raising a payable condition's spend raises its HCC coefficient")
{
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        auto spec = shipped(40000, seed);
        auto recs = generate(spec);
        double before = coefficient(recs, baseline(), "HCC019");
        for (auto& c : spec.conditions)
            if (c.id == "diabetes") c.spend.mu += 0.3;
        double after = coefficient(generate(spec), baseline(), "HCC019");
        CHECK(after > before);
    }
}

TEST_CASE("published target bands")
{
    auto t = CalibrationTargets::published("mhsud");
    CHECK(t.prevalence->contains(0.138));
    CHECK(t.recognized_prevalence->contains(0.026));
    CHECK(t.overall_mean->contains(6619.0));
    CHECK(t.mean_ratio->contains(1.71));
    CHECK(t.baseline_adj_r2->contains(0.131));
    CHECK(t.net_compensation_fraction->contains(-0.25));
    CHECK_FALSE(t.prevalence->contains(0.15));
    CHECK_FALSE(t.overall_mean->contains(7300.0));
}
