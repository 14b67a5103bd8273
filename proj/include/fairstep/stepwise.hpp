#pragma once

#include "fairstep/metrics.hpp"
#include "fairstep/ols.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace fairstep {

enum class StepKind : std::uint8_t { Add, Remove };

std::string to_string(StepKind kind);

struct StepAction {
    StepKind kind = StepKind::Add;
    std::vector<VariableId> variables;
    /// Name of the pool block the action came from; informational only.
    std::string label;

    bool same_as(const StepAction& other) const { return kind == other.kind && variables == other.variables; }
};

std::string describe(const StepAction& action);

/// A curated block of HCC variables that is added or removed as a unit.
struct CandidateBlock {
    std::string label;
    std::vector<VariableId> variables;
};

using CandidatePool = std::vector<CandidateBlock>;

// --- policies --------------------------------------------------------------

struct MaxR2 {
    double min_gain = 0.0;
};

struct PValueGate {
    double alpha = 0.05;
};

struct NetCompTowardZero {
    std::string group_id;
    bool require_nonpositive_start = true;
};

struct Objective;

/// Objectives applied in order; the first that accepts or rejects decides,
/// later ones are consulted only when earlier ones are indifferent.
struct Lexicographic {
    std::vector<Objective> objectives;
};

struct Objective {
    std::variant<MaxR2, PValueGate, NetCompTowardZero, Lexicographic> rule;
};

struct SelectionPolicy {
    std::string name;
    Objective objective;
    bool parsimony_tiebreak = false;
    EvaluationMode evaluation;

    /// Throws ConfigError for alpha outside (0,1), negative min_gain or an
    /// empty lexicographic list.
    void validate() const;
};

/// Net-compensation changes smaller than this (USD) are ties.
inline constexpr double kNetCompTieTolerance = 0.01;
/// r2 changes at or below this are ties.
inline constexpr double kR2TieTolerance = 1e-12;

// --- evaluation ------------------------------------------------------------

struct GroupDelta {
    std::string group_id;
    double before = 0.0;
    double after = 0.0;
    double absolute = 0.0;
    std::optional<double> relative_percent;
    /// |after| < |before|.
    bool toward_zero = false;
};

struct StepDeltas {
    double r2_absolute = 0.0;
    std::optional<double> r2_relative_percent;
    std::optional<double> adj_r2_absolute;
    std::optional<double> adj_r2_relative_percent;
    std::vector<GroupDelta> groups;
    /// Smallest naive p-value among added variables (Add steps only).
    std::optional<double> min_added_p_value;

    const GroupDelta* group(const std::string& id) const;
};

/// Frozen formula state: incremental fit plus the report under the active
/// evaluation mode.
struct SearchState {
    SweepState fit_state;
    FitResult fit;
    MetricReport report;

    const Formula& formula() const { return fit_state.formula(); }
};

struct StepEvaluation {
    StepAction action;
    MetricReport before;
    MetricReport after;
    StepDeltas deltas;
    /// Added variables that could not be estimated.
    std::vector<VariableId> aliased;
    SearchState next;
};

/// Data bound to a fixed column universe (baseline plus every pool variable).
/// Shared read-only by searches; the cross-validation cache is internally locked.
class StepwiseContext {
public:
    StepwiseContext(DesignMatrix universe, std::vector<double> y, std::vector<GroupVector> groups,
                    FitOptions options = {});

    static StepwiseContext from_cohort(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps,
                                       const std::vector<GroupDefinition>& groups, const Formula& universe,
                                       const AgeBanding& banding = {});

    const DesignMatrix& universe() const noexcept { return universe_; }
    const std::vector<double>& outcome() const noexcept { return y_; }
    const std::vector<GroupVector>& groups() const noexcept { return groups_; }
    std::shared_ptr<const CrossProduct> cross_products() const noexcept { return xp_; }

    SearchState initial_state(const Formula& baseline, const EvaluationMode& mode) const;
    MetricReport report_for(const SweepState& state, const FitResult& fit, const EvaluationMode& mode) const;

private:
    std::shared_ptr<const CrossValidator> validator(const EvaluationMode& mode) const;

    DesignMatrix universe_;
    std::vector<double> y_;
    std::vector<GroupVector> groups_;
    FitOptions options_;
    std::shared_ptr<const CrossProduct> xp_;
    struct CvCache {
        std::mutex mutex;
        std::map<std::pair<std::size_t, std::uint64_t>, std::shared_ptr<const CrossValidator>> validators;
    };
    std::unique_ptr<CvCache> cv_cache_ = std::make_unique<CvCache>();
};

/// Baseline followed by pool variables not already present, in pool order.
Formula universe_formula(const Formula& baseline, const CandidatePool& pool);

/// Pool blocks must be non-empty, HCC-only and free of repeated variables.
void validate_pool(const CandidatePool& pool);

/// Additions (blocks fully absent) in pool order, then removals (blocks fully
/// present) ordered by their last formula position, latest first.
std::vector<StepAction> propose_steps(const Formula& current, const CandidatePool& pool);

bool action_applies(const StepAction& action, const Formula& current);

StepEvaluation evaluate_step(const StepwiseContext& context, const SearchState& current, const StepAction& action,
                             const EvaluationMode& mode);

struct Decision {
    bool accepted = false;
    std::string reason;
};

Decision accept_step(const SelectionPolicy& policy, const StepEvaluation& evaluation);

struct TraceEntry {
    std::size_t step = 0;
    StepAction action;
    MetricReport report_before;
    MetricReport report_after;
    StepDeltas deltas;
    bool accepted = false;
    std::string reason;
    /// Fits evaluated so far in this search, a reminder that the p-values
    /// shown are unadjusted for this many looks.
    std::size_t fits_evaluated = 0;
};

struct DecisionTrace {
    std::string policy_name;
    Formula baseline;
    std::vector<TraceEntry> entries;
};

struct StepwiseRun {
    Formula final_formula;
    MetricReport final_report;
    DecisionTrace trace;
};

StepwiseRun run_stepwise(const StepwiseContext& context, const Formula& baseline, const CandidatePool& pool,
                         const SelectionPolicy& policy);

/// Re-applies the accepted actions of `trace` from its baseline.
SearchState replay_trace(const StepwiseContext& context, const DecisionTrace& trace, const EvaluationMode& mode);

/// First entry index where the two traces differ in action or decision
/// (or where one ends first); absent when they agree throughout.
std::optional<std::size_t> divergence_index(const DecisionTrace& a, const DecisionTrace& b);

struct PairDivergence {
    std::size_t first = 0;
    std::size_t second = 0;
    std::optional<std::size_t> index;
};

struct DivergenceReport {
    std::vector<SelectionPolicy> policies;
    std::vector<StepwiseRun> runs;
    std::vector<PairDivergence> pairs;
    /// Earliest divergence across all pairs.
    std::optional<std::size_t> first_divergence;
};

DivergenceReport compare_policies(const StepwiseContext& context, const Formula& baseline, const CandidatePool& pool,
                                  const std::vector<SelectionPolicy>& policies);

} // namespace fairstep
