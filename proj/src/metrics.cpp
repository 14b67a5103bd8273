#include "fairstep/metrics.hpp"

#include "fairstep/error.hpp"
#include "fairstep/numeric.hpp"
#include "fairstep/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fairstep {

namespace {

struct GroupSums {
    double predicted = 0.0;
    double actual = 0.0;
    std::size_t n = 0;
};

GroupSums group_sums(std::span<const double> yhat, std::span<const double> y, const std::vector<bool>& member)
{
    if (yhat.size() != y.size() || member.size() != y.size()) {
        throw ConfigError("group metric inputs differ in length");
    }
    CompensatedSum p;
    CompensatedSum a;
    GroupSums s;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (member[i]) {
            p.add(yhat[i]);
            a.add(y[i]);
            ++s.n;
        }
    }
    s.predicted = p.value();
    s.actual = a.value();
    return s;
}

} // namespace

std::vector<GroupVector> group_vectors(const std::vector<EnrolleeRecord>& records,
                                       const std::vector<GroupDefinition>& groups, const CodeMaps& maps)
{
    std::vector<GroupVector> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        out.push_back({g.group_id, group_membership(records, g, maps)});
    }
    return out;
}

double net_compensation(std::span<const double> yhat, std::span<const double> y, const std::vector<bool>& member)
{
    const auto s = group_sums(yhat, y, member);
    if (s.n == 0) {
        throw ConfigError("empty group");
    }
    const double ng = static_cast<double>(s.n);
    return s.predicted / ng - s.actual / ng;
}

double predictive_ratio(std::span<const double> yhat, std::span<const double> y, const std::vector<bool>& member)
{
    const auto s = group_sums(yhat, y, member);
    if (s.n == 0) {
        throw ConfigError("empty group");
    }
    if (!(s.actual > 0.0)) {
        throw ConfigError("predictive ratio undefined: group actual spending total is not positive");
    }
    return s.predicted / s.actual;
}

GroupMetrics compute_group_metrics(const std::string& group_id, std::span<const double> yhat,
                                   std::span<const double> y, const std::vector<bool>& member)
{
    const auto s = group_sums(yhat, y, member);
    if (s.n == 0) {
        throw ConfigError("empty group '" + group_id + "'");
    }
    GroupMetrics m;
    m.group_id = group_id;
    m.n_g = s.n;
    const double ng = static_cast<double>(s.n);
    m.group_mean_spend = s.actual / ng;
    m.group_mean_predicted = s.predicted / ng;
    m.net_compensation = s.predicted / ng - s.actual / ng;
    if (s.actual > 0.0) {
        m.predictive_ratio = s.predicted / s.actual;
    }
    return m;
}

const GroupMetrics* MetricReport::group(const std::string& group_id) const
{
    for (const auto& g : group_metrics) {
        if (g.group_id == group_id) {
            return &g;
        }
    }
    return nullptr;
}

namespace {

std::vector<VariableReport> variable_rows(const FitResult& fit)
{
    std::vector<VariableReport> rows;
    rows.reserve(fit.estimates.size());
    for (const auto& e : fit.estimates) {
        rows.push_back({e.variable, e.coefficient, e.aliased, e.p_value});
    }
    return rows;
}

} // namespace

MetricReport in_sample_report(const FitResult& fit, const DesignMatrix& x, std::span<const double> y,
                              const std::vector<GroupVector>& groups)
{
    if (y.size() != x.rows() || fit.n != x.rows()) {
        throw ConfigError("in-sample report needs the training design and outcome of the fit");
    }
    const auto yhat = predict(fit, x);
    MetricReport report;
    report.formula = fit.formula;
    report.r2 = fit.r2;
    report.adj_r2 = fit.adj_r2;
    report.per_variable = variable_rows(fit);
    for (const auto& g : groups) {
        report.group_metrics.push_back(compute_group_metrics(g.group_id, yhat, y, g.member));
    }
    report.evaluation_mode = EvaluationMode::in_sample();
    return report;
}

std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed)
{
    if (folds < 2) {
        throw ConfigError("cross-validation needs at least 2 folds");
    }
    if (folds > n) {
        throw ConfigError("more folds (" + std::to_string(folds) + ") than rows (" + std::to_string(n) + ")");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(derive_seed(seed, 0xF01D));
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::size_t> fold_of(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        fold_of[order[pos]] = pos % folds;
    }
    return fold_of;
}

CrossValidator::CrossValidator(const DesignMatrix& universe, std::span<const double> y, std::size_t folds,
                               std::uint64_t seed, FitOptions options)
    : universe_(universe), y_(y.begin(), y.end()), folds_(folds), seed_(seed), options_(options)
{
    if (y_.size() != universe_.rows()) {
        throw ConfigError("outcome length does not match design rows");
    }
    fold_of_ = assign_folds(universe_.rows(), folds, seed);
    for (std::size_t f = 0; f < folds_; ++f) {
        std::vector<std::uint32_t> train;
        train.reserve(universe_.rows());
        for (std::size_t i = 0; i < universe_.rows(); ++i) {
            if (fold_of_[i] != f) {
                train.push_back(static_cast<std::uint32_t>(i));
            }
        }
        training_.push_back(std::make_shared<const CrossProduct>(cross_product(universe_, y_, train)));
    }
    const double mean = compensated_sum(y_) / static_cast<double>(y_.size());
    CompensatedSum ss;
    for (double v : y_) {
        ss.add((v - mean) * (v - mean));
    }
    tss_ = ss.value();
}

std::vector<double> CrossValidator::out_of_fold_predictions(const Formula& formula) const
{
    std::vector<double> oof(universe_.rows(), 0.0);
    for (std::size_t f = 0; f < folds_; ++f) {
        FitResult fold_fit;
        try {
            fold_fit = SweepState(training_[f], formula, options_).result();
        } catch (const FitError& e) {
            throw FitError("cross-validation fold " + std::to_string(f) + ": " + e.what());
        }
        const auto yhat = predict(fold_fit, universe_);
        for (std::size_t i = 0; i < oof.size(); ++i) {
            if (fold_of_[i] == f) {
                oof[i] = yhat[i];
            }
        }
    }
    return oof;
}

MetricReport CrossValidator::report(const Formula& formula, const FitResult& full_fit,
                                    const std::vector<GroupVector>& groups) const
{
    if (!(tss_ > 0.0)) {
        throw FitError("degenerate outcome: total sum of squares is zero");
    }
    const auto oof = out_of_fold_predictions(formula);
    CompensatedSum press;
    for (std::size_t i = 0; i < oof.size(); ++i) {
        const double r = y_[i] - oof[i];
        press.add(r * r);
    }
    MetricReport report;
    report.formula = formula;
    report.r2 = 1.0 - press.value() / tss_;
    report.per_variable = variable_rows(full_fit);
    for (const auto& g : groups) {
        report.group_metrics.push_back(compute_group_metrics(g.group_id, oof, y_, g.member));
    }
    report.evaluation_mode = EvaluationMode::cross_validated(folds_, seed_);
    return report;
}

MetricReport cross_validated_report(const std::vector<EnrolleeRecord>& records, const Formula& formula,
                                    const std::vector<GroupDefinition>& groups, const CodeMaps& maps,
                                    std::size_t folds, std::uint64_t seed, const AgeBanding& banding)
{
    CohortFeatures features(records, maps, banding);
    const auto x = build_design(features, formula, maps);
    const auto y = spend_vector(records);
    const auto full = fit(x, y);
    CrossValidator cv(x, y, folds, seed);
    return cv.report(formula, full, group_vectors(records, groups, maps));
}

std::optional<double> relative_percent(double before, double after)
{
    if (std::fabs(before) <= kRelativeFloor * std::max(1.0, std::fabs(after))) {
        return std::nullopt;
    }
    return (after - before) / std::fabs(before) * 100.0;
}

} // namespace fairstep
