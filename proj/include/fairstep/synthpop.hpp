#pragma once

#include "fairstep/cohort.hpp"
#include "fairstep/design.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fairstep {

struct Lognormal {
    double mu = 0.0;
    double sigma = 0.0;

    double mean() const;
    bool operator==(const Lognormal&) const = default;
};

/// Condition prevalence is multiplied by `factor` for people already in
/// `given_group` (conditions are drawn in table order).
struct RelativeRisk {
    std::string given_group;
    double factor = 1.0;
    bool operator==(const RelativeRisk&) const = default;
};

struct SyntheticCondition {
    std::string id;
    double prevalence = 0.0;
    std::vector<std::string> emits;
    /// Codes emitted instead of `emits` when a group member is unrecognized;
    /// conditions without variants are always emitted as drawn.
    std::vector<std::string> unpayable_emits;
    bool payable = true;
    Lognormal spend;
    std::optional<RelativeRisk> relative_risk;
    bool operator==(const SyntheticCondition&) const = default;
};

struct SyntheticGroup {
    std::string group_id;
    std::vector<std::string> condition_ids;
    bool operator==(const SyntheticGroup&) const = default;
};

struct SyntheticSpec {
    std::string name = "synthetic";
    std::size_t n = 0;
    std::uint64_t seed = 0;
    int age_min = 18;
    int age_max = 64;
    double female_share = 0.5;
    std::vector<std::string> regions{"NE", "MW", "S", "W"};
    Lognormal base_spend;
    double unrecognized_fraction = 0.8;
    std::vector<SyntheticCondition> conditions;
    std::vector<SyntheticGroup> groups;

    const SyntheticCondition* condition(const std::string& id) const;
    bool operator==(const SyntheticSpec&) const = default;
};

SyntheticSpec parse_synthetic_spec(const nlohmann::json& doc);
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

/// Structural checks, plus code checks against `maps` when given: every
/// emitted ICD must be mapped, payable conditions must emit a payment HCC,
/// and unpayable variants must not.
void validate_spec(const SyntheticSpec& spec, const CodeMaps* maps = nullptr);

/// People [begin, end) of the population. Person i draws from its own
/// SplitMix64 stream seeded with derive_seed(seed, i), so any split into
/// ranges concatenates to the same population.
std::vector<EnrolleeRecord> generate_range(const SyntheticSpec& spec, std::size_t begin, std::size_t end);

/// Whole population; `threads` > 1 generates contiguous shards in parallel.
std::vector<EnrolleeRecord> generate(const SyntheticSpec& spec, unsigned threads = 1);

/// Streams the population as enrollee CSV in fixed-size chunks.
void write_population(const SyntheticSpec& spec, std::ostream& out, std::size_t chunk = 50000);

struct GroupCalibration {
    std::string group_id;
    double prevalence = 0.0;
    /// Share of the whole population holding a payable HCC that the group's
    /// CCS categories map to.
    double recognized_prevalence = 0.0;
    double mean_spend = 0.0;
    double mean_ratio = 0.0;
    double net_compensation = 0.0;
    double net_compensation_fraction = 0.0;
};

struct CalibrationSummary {
    std::size_t n = 0;
    double overall_mean = 0.0;
    double baseline_r2 = 0.0;
    double baseline_adj_r2 = 0.0;
    std::vector<GroupCalibration> groups;

    const GroupCalibration* group(const std::string& id) const;
};

CalibrationSummary calibration_report(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps,
                                      const std::vector<GroupDefinition>& groups, const Formula& baseline,
                                      const AgeBanding& banding = {});

struct Band {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double x) const { return x >= lo && x <= hi; }
    double mid() const { return 0.5 * (lo + hi); }
};

struct CalibrationTargets {
    std::string group_id;
    std::optional<Band> prevalence;
    std::optional<Band> recognized_prevalence;
    std::optional<Band> overall_mean;
    std::optional<Band> mean_ratio;
    std::optional<Band> baseline_adj_r2;
    std::optional<Band> net_compensation_fraction;

    /// Published commercial-market values for the mental-health and
    /// substance-use group with their acceptance tolerances.
    static CalibrationTargets published(std::string group_id);
};

struct TargetCheck {
    std::string name;
    double value = 0.0;
    Band band;
    bool pass = false;
};

std::vector<TargetCheck> check_targets(const CalibrationSummary& summary, const CalibrationTargets& targets);

struct TuneResult {
    SyntheticSpec spec;
    bool converged = false;
    std::size_t iterations = 0;
    std::vector<TargetCheck> checks;
    /// Why tuning stopped short; empty on success.
    std::vector<std::string> failures;
};

/// Coordinate-wise closed-form adjustment: group prevalences scale to hit
/// the prevalence target, the base mu shifts for the overall mean, and group
/// condition mus shift for the mean ratio. Targets without a closed-form
/// parameter are checked only.
TuneResult tune(const SyntheticSpec& spec, const CalibrationTargets& targets, const CodeMaps& maps,
                const std::vector<GroupDefinition>& groups, const Formula& baseline, std::size_t max_iters,
                const AgeBanding& banding = {});

} // namespace fairstep
