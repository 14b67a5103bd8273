#include "fairstep/ols.hpp"

#include "fairstep/error.hpp"
#include "fairstep/numeric.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fairstep {

std::optional<std::size_t> CrossProduct::slot_of(const VariableId& v) const
{
    auto it = std::find(columns.begin(), columns.end(), v);
    if (it == columns.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - columns.begin());
}

namespace {

// Active (non-intercept) columns of every row, as CSR.
struct RowColumns {
    std::vector<std::size_t> offsets;
    std::vector<std::uint32_t> cols;
};

RowColumns row_columns(const DesignMatrix& x)
{
    RowColumns rc;
    rc.offsets.assign(x.rows() + 1, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) {
        for (auto r : x.column_rows(c)) {
            ++rc.offsets[r + 1];
        }
    }
    std::partial_sum(rc.offsets.begin(), rc.offsets.end(), rc.offsets.begin());
    rc.cols.resize(rc.offsets.back());
    auto fill = rc.offsets;
    for (std::size_t c = 1; c < x.cols(); ++c) {
        for (auto r : x.column_rows(c)) {
            rc.cols[fill[r]++] = static_cast<std::uint32_t>(c);
        }
    }
    return rc;
}

template <typename RowRange>
CrossProduct accumulate(const DesignMatrix& x, std::span<const double> y, const RowRange& rows, std::size_t count)
{
    const std::size_t p = x.cols();
    CrossProduct xp;
    xp.columns = x.formula().variables;
    xp.gram = SquareMatrix(p + 1);
    xp.n = count;

    const auto rc = row_columns(x);
    std::vector<double> counts(p * p, 0.0);
    std::vector<CompensatedSum> xy(p);
    CompensatedSum yy;
    for (std::size_t i : rows) {
        const double yi = y[i];
        xy[0].add(yi);
        yy.add(yi * yi);
        const auto begin = rc.offsets[i];
        const auto end = rc.offsets[i + 1];
        for (auto a = begin; a < end; ++a) {
            const auto ca = rc.cols[a];
            counts[ca] += 1.0; // row 0 (intercept) x column ca
            xy[ca].add(yi);
            for (auto b = a; b < end; ++b) {
                counts[ca * p + rc.cols[b]] += 1.0;
            }
        }
    }
    auto& g = xp.gram;
    g(0, 0) = static_cast<double>(count);
    for (std::size_t a = 1; a < p; ++a) {
        g(0, a) = g(a, 0) = counts[a];
        for (std::size_t b = a; b < p; ++b) {
            // Column lists are sorted by column index within a row, so only the
            // upper triangle was filled.
            g(a, b) = g(b, a) = counts[a * p + b];
        }
    }
    for (std::size_t a = 0; a < p; ++a) {
        g(a, p) = g(p, a) = xy[a].value();
    }
    g(p, p) = yy.value();
    xp.y_sum = xy[0].value();

    if (count > 0) {
        const double mean = xp.y_sum / static_cast<double>(count);
        CompensatedSum ss;
        for (std::size_t i : rows) {
            const double d = y[i] - mean;
            ss.add(d * d);
        }
        xp.tss = ss.value();
    }
    return xp;
}

} // namespace

CrossProduct cross_product(const DesignMatrix& x, std::span<const double> y)
{
    if (y.size() != x.rows()) {
        throw ConfigError("outcome length " + std::to_string(y.size()) + " does not match design rows " +
                          std::to_string(x.rows()));
    }
    std::vector<std::size_t> all(x.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return accumulate(x, y, all, all.size());
}

CrossProduct cross_product(const DesignMatrix& x, std::span<const double> y, std::span<const std::uint32_t> rows)
{
    if (y.size() != x.rows()) {
        throw ConfigError("outcome length " + std::to_string(y.size()) + " does not match design rows " +
                          std::to_string(x.rows()));
    }
    std::vector<std::size_t> subset(rows.begin(), rows.end());
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (subset[i] >= x.rows() || (i > 0 && subset[i] <= subset[i - 1])) {
            throw ConfigError("row subset must be sorted, unique and within the design");
        }
    }
    return accumulate(x, y, subset, subset.size());
}

bool sweep(SquareMatrix& m, std::size_t k, double min_pivot)
{
    const std::size_t dim = m.dim();
    const double d = m(k, k);
    if (!(std::fabs(d) > min_pivot)) {
        return false;
    }
    for (std::size_t i = 0; i < dim; ++i) {
        if (i == k) {
            continue;
        }
        const double mik = m(i, k);
        if (mik == 0.0) {
            continue;
        }
        const double f = mik / d;
        for (std::size_t j = 0; j < dim; ++j) {
            if (j != k) {
                m(i, j) -= f * m(k, j);
            }
        }
    }
    for (std::size_t j = 0; j < dim; ++j) {
        if (j != k) {
            m(k, j) /= d;
            m(j, k) /= d;
        }
    }
    m(k, k) = -1.0 / d;
    return true;
}

void reverse_sweep(SquareMatrix& m, std::size_t k)
{
    const std::size_t dim = m.dim();
    const double d = m(k, k);
    for (std::size_t i = 0; i < dim; ++i) {
        if (i == k) {
            continue;
        }
        const double mik = m(i, k);
        if (mik == 0.0) {
            continue;
        }
        const double f = mik / d;
        for (std::size_t j = 0; j < dim; ++j) {
            if (j != k) {
                m(i, j) -= f * m(k, j);
            }
        }
    }
    for (std::size_t j = 0; j < dim; ++j) {
        if (j != k) {
            m(k, j) = -m(k, j) / d;
            m(j, k) = -m(j, k) / d;
        }
    }
    m(k, k) = -1.0 / d;
}

double two_sided_p_value(double t, double df)
{
    if (std::isnan(t) || !(df > 0.0)) {
        throw FitError("p-value needs a finite t statistic and positive degrees of freedom");
    }
    if (std::isinf(t)) {
        return 0.0;
    }
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
}

const CoefficientEstimate* FitResult::estimate(const VariableId& v) const
{
    for (const auto& e : estimates) {
        if (e.variable == v) {
            return &e;
        }
    }
    return nullptr;
}

std::vector<double> FitResult::coefficients() const
{
    std::vector<double> out;
    out.reserve(estimates.size());
    for (const auto& e : estimates) {
        out.push_back(e.coefficient);
    }
    return out;
}

// --- SweepState ----------------------------------------------------------

SweepState::SweepState(std::shared_ptr<const CrossProduct> xp, const Formula& formula, FitOptions options)
    : xp_(std::move(xp)), options_(options)
{
    if (!xp_) {
        throw ConfigError("sweep state needs cross-products");
    }
    if (formula.variables.empty() || formula.variables.front().kind != VariableKind::Intercept) {
        throw ConfigError("formula must start with the intercept");
    }
    m_ = xp_->gram;
    swept_.assign(m_.dim(), false);
    for (const auto& v : formula.variables) {
        auto slot = xp_->slot_of(v);
        if (!slot) {
            throw ConfigError("variable " + to_string(v) + " is not in the cross-product universe");
        }
        if (std::find(slots_.begin(), slots_.end(), *slot) != slots_.end()) {
            throw ConfigError("formula lists " + to_string(v) + " twice");
        }
        formula_.variables.push_back(v);
        slots_.push_back(*slot);
        try_sweep(*slot);
    }
}

bool SweepState::try_sweep(std::size_t slot)
{
    const double floor = options_.pivot_tolerance * xp_->gram(slot, slot);
    // Unswept pivots are residual sums of squares and hence non-negative;
    // anything at or below the floor is treated as collinear.
    if (!(m_(slot, slot) > floor)) {
        return false;
    }
    if (!sweep(m_, slot, 0.0)) {
        return false;
    }
    swept_[slot] = true;
    return true;
}

bool SweepState::is_aliased(const VariableId& v) const
{
    auto idx = formula_.index_of(v);
    return idx && !swept_[slots_[*idx]];
}

SweepState SweepState::added(const VariableId& v) const
{
    if (formula_.contains(v)) {
        throw ConfigError("formula already contains " + to_string(v));
    }
    auto slot = xp_->slot_of(v);
    if (!slot) {
        throw ConfigError("variable " + to_string(v) + " is not in the cross-product universe");
    }
    SweepState next = *this;
    next.formula_.variables.push_back(v);
    next.slots_.push_back(*slot);
    next.try_sweep(*slot);
    return next;
}

SweepState SweepState::removed(const VariableId& v) const
{
    if (v.kind == VariableKind::Intercept) {
        throw ConfigError("the intercept cannot be removed");
    }
    auto idx = formula_.index_of(v);
    if (!idx) {
        throw ConfigError("formula does not contain " + to_string(v));
    }
    SweepState next = *this;
    const auto slot = slots_[*idx];
    if (next.swept_[slot]) {
        reverse_sweep(next.m_, slot);
        next.swept_[slot] = false;
    }
    next.formula_.variables.erase(next.formula_.variables.begin() + static_cast<std::ptrdiff_t>(*idx));
    next.slots_.erase(next.slots_.begin() + static_cast<std::ptrdiff_t>(*idx));
    for (auto s : next.slots_) {
        if (!next.swept_[s]) {
            next.try_sweep(s);
        }
    }
    return next;
}

FitResult SweepState::result() const
{
    const auto& xp = *xp_;
    const auto out = xp.outcome();
    if (!(xp.tss > 0.0)) {
        throw FitError("degenerate outcome: total sum of squares is zero");
    }
    std::size_t swept_count = 0;
    for (auto s : slots_) {
        swept_count += swept_[s] ? 1 : 0;
    }
    if (xp.n <= swept_count) {
        throw FitError("n = " + std::to_string(xp.n) + " does not exceed the " + std::to_string(swept_count) +
                       " estimable columns");
    }

    FitResult fit;
    fit.formula = formula_;
    fit.n = xp.n;
    fit.tss = xp.tss;
    fit.rss = std::clamp(m_(out, out), 0.0, xp.tss);
    fit.df_resid = xp.n - swept_count;
    fit.p_effective = swept_count - 1;
    fit.sigma2 = fit.rss / static_cast<double>(fit.df_resid);
    fit.r2 = 1.0 - fit.rss / fit.tss;
    fit.adj_r2 = 1.0 - (1.0 - fit.r2) * static_cast<double>(xp.n - 1) / static_cast<double>(fit.df_resid);

    for (std::size_t i = 0; i < formula_.variables.size(); ++i) {
        const auto slot = slots_[i];
        CoefficientEstimate est;
        est.variable = formula_.variables[i];
        if (!swept_[slot]) {
            est.aliased = true;
            fit.aliased.push_back(est.variable);
        } else {
            est.coefficient = m_(slot, out);
            if (est.variable.kind != VariableKind::Intercept) {
                const double var = fit.sigma2 * std::max(0.0, -m_(slot, slot));
                const double se = std::sqrt(var);
                est.std_error = se;
                if (se > 0.0) {
                    est.t_stat = est.coefficient / se;
                    est.p_value = two_sided_p_value(*est.t_stat, static_cast<double>(fit.df_resid));
                }
            }
        }
        fit.estimates.push_back(std::move(est));
    }
    return fit;
}

Refit refit_add(const SweepState& state, const VariableId& v)
{
    auto next = state.added(v);
    auto result = next.result();
    return {std::move(next), std::move(result)};
}

Refit refit_remove(const SweepState& state, const VariableId& v)
{
    auto next = state.removed(v);
    auto result = next.result();
    return {std::move(next), std::move(result)};
}

FitResult fit(const DesignMatrix& x, std::span<const double> y, FitOptions options)
{
    auto xp = std::make_shared<const CrossProduct>(cross_product(x, y));
    return SweepState(xp, x.formula(), options).result();
}

std::vector<double> predict(const FitResult& fit, const DesignMatrix& x)
{
    std::vector<double> yhat(x.rows(), 0.0);
    for (const auto& est : fit.estimates) {
        auto col = x.find(est.variable);
        if (!col) {
            throw ConfigError("design lacks column " + to_string(est.variable) + " required by the fit");
        }
        if (est.coefficient == 0.0) {
            continue;
        }
        if (x.is_intercept(*col)) {
            for (auto& v : yhat) {
                v += est.coefficient;
            }
        } else {
            for (auto r : x.column_rows(*col)) {
                yhat[r] += est.coefficient;
            }
        }
    }
    return yhat;
}

} // namespace fairstep
