#pragma once

#include "fairstep/cohort.hpp"
#include "fairstep/design.hpp"
#include "fairstep/ols.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairstep {

/// A named membership vector aligned with the cohort rows.
struct GroupVector {
    std::string group_id;
    std::vector<bool> member;
};

std::vector<GroupVector> group_vectors(const std::vector<EnrolleeRecord>& records,
                                       const std::vector<GroupDefinition>& groups, const CodeMaps& maps);

/// Mean predicted minus mean actual spending over the group (negative means
/// the group is underpaid). Throws ConfigError for an empty group.
double net_compensation(std::span<const double> yhat, std::span<const double> y, const std::vector<bool>& member);

/// Group total predicted over group total actual. Throws when the actual
/// total is not positive.
double predictive_ratio(std::span<const double> yhat, std::span<const double> y, const std::vector<bool>& member);

struct GroupMetrics {
    std::string group_id;
    double net_compensation = 0.0;
    /// Absent when the group's actual spending total is not positive.
    std::optional<double> predictive_ratio;
    std::size_t n_g = 0;
    double group_mean_spend = 0.0;
    double group_mean_predicted = 0.0;
};

GroupMetrics compute_group_metrics(const std::string& group_id, std::span<const double> yhat,
                                   std::span<const double> y, const std::vector<bool>& member);

enum class EvaluationKind : std::uint8_t { InSample, CrossValidated };

struct EvaluationMode {
    EvaluationKind kind = EvaluationKind::InSample;
    std::size_t folds = 0;
    std::uint64_t seed = 0;

    static EvaluationMode in_sample() { return {}; }
    static EvaluationMode cross_validated(std::size_t folds, std::uint64_t seed)
    {
        return {EvaluationKind::CrossValidated, folds, seed};
    }
    bool operator==(const EvaluationMode&) const = default;
};

struct VariableReport {
    VariableId variable;
    double coefficient = 0.0;
    bool aliased = false;
    /// Naive p-value from the full-data fit.
    std::optional<double> p_value;
};

struct MetricReport {
    Formula formula;
    double r2 = 0.0;
    /// Absent in cross-validated mode.
    std::optional<double> adj_r2;
    std::vector<VariableReport> per_variable;
    std::vector<GroupMetrics> group_metrics;
    EvaluationMode evaluation_mode;
    /// p-values are unadjusted for selection; always true, carried for output.
    bool naive_p_values = true;

    const GroupMetrics* group(const std::string& group_id) const;
};

MetricReport in_sample_report(const FitResult& fit, const DesignMatrix& x, std::span<const double> y,
                              const std::vector<GroupVector>& groups);

/// Fold id per row: a seeded Fisher-Yates shuffle dealt round-robin, so fold
/// sizes differ by at most one.
std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed);

/// Out-of-fold evaluation over a fixed column universe. Per-fold training
/// cross-products are computed once, so any formula drawn from the universe
/// can be scored cheaply.
class CrossValidator {
public:
    CrossValidator(const DesignMatrix& universe, std::span<const double> y, std::size_t folds, std::uint64_t seed,
                   FitOptions options = {});

    std::size_t folds() const noexcept { return folds_; }
    /// Pooled out-of-fold predictions for `formula`.
    std::vector<double> out_of_fold_predictions(const Formula& formula) const;
    /// Report with CV r2 and group metrics; per-variable rows come from `full_fit`.
    MetricReport report(const Formula& formula, const FitResult& full_fit, const std::vector<GroupVector>& groups) const;

private:
    DesignMatrix universe_;
    std::vector<double> y_;
    std::size_t folds_;
    std::uint64_t seed_;
    FitOptions options_;
    std::vector<std::size_t> fold_of_;
    std::vector<std::shared_ptr<const CrossProduct>> training_;
    double tss_ = 0.0;
};

MetricReport cross_validated_report(const std::vector<EnrolleeRecord>& records, const Formula& formula,
                                    const std::vector<GroupDefinition>& groups, const CodeMaps& maps,
                                    std::size_t folds, std::uint64_t seed, const AgeBanding& banding = {});

/// Magnitudes at or below this (relative to max(1, |after|)) count as zero.
inline constexpr double kRelativeFloor = 1e-9;

/// Relative change in percent of |before|; absent when before is zero up to
/// rounding noise.
std::optional<double> relative_percent(double before, double after);

} // namespace fairstep
