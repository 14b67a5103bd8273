#pragma once

#include "fairstep/design.hpp"

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace fairstep {

/// Dense row-major square matrix.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t dim) : dim_(dim), data_(dim * dim, 0.0) {}

    std::size_t dim() const noexcept { return dim_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * dim_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * dim_ + j]; }
    bool operator==(const SquareMatrix&) const = default;

private:
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Augmented cross-products [X|y]'[X|y]. The outcome occupies the last slot.
struct CrossProduct {
    std::vector<VariableId> columns;
    SquareMatrix gram;
    std::size_t n = 0;
    double y_sum = 0.0;
    /// Total sum of squares about the mean, accumulated in two passes.
    double tss = 0.0;

    std::size_t outcome() const noexcept { return columns.size(); }
    std::optional<std::size_t> slot_of(const VariableId& v) const;
};

/// Cross-products over all rows, summed in row order. Binary products are
/// exact integer counts; outcome sums use compensated accumulation.
CrossProduct cross_product(const DesignMatrix& x, std::span<const double> y);
/// Same, restricted to the given sorted row subset.
CrossProduct cross_product(const DesignMatrix& x, std::span<const double> y, std::span<const std::uint32_t> rows);

/// Sweeps pivot k in place: d = m(k,k); m(k,k) <- -1/d; row and column k are
/// divided by d; every other entry loses m(i,k) m(k,j) / d. Returns false and
/// leaves `m` untouched when |d| <= min_pivot (the column is aliased).
[[nodiscard]] bool sweep(SquareMatrix& m, std::size_t k, double min_pivot = 0.0);
/// Inverse of `sweep` for the same pivot.
void reverse_sweep(SquareMatrix& m, std::size_t k);

struct FitOptions {
    /// Column is aliased when its pivot <= tolerance * its raw diagonal entry.
    double pivot_tolerance = 1e-10;
};

struct CoefficientEstimate {
    VariableId variable;
    double coefficient = 0.0;
    bool aliased = false;
    std::optional<double> std_error;
    std::optional<double> t_stat;
    /// Naive two-sided p-value; not adjusted for model search.
    std::optional<double> p_value;
};

struct FitResult {
    Formula formula;
    /// One entry per formula variable, in formula order.
    std::vector<CoefficientEstimate> estimates;
    std::size_t n = 0;
    double rss = 0.0;
    double tss = 0.0;
    std::size_t df_resid = 0;
    double sigma2 = 0.0;
    double r2 = 0.0;
    double adj_r2 = 0.0;
    /// Non-aliased, non-intercept columns.
    std::size_t p_effective = 0;
    std::vector<VariableId> aliased;

    const CoefficientEstimate* estimate(const VariableId& v) const;
    std::vector<double> coefficients() const;
};

/// Two-sided tail probability of |t| under Student's t with `df` degrees of freedom.
double two_sided_p_value(double t, double df);

/// Swept cross-product restricted to a formula drawn from a larger column
/// universe. Values are immutable; add/remove return new states at O(P^2)
/// cost, where P is the universe size.
class SweepState {
public:
    SweepState(std::shared_ptr<const CrossProduct> xp, const Formula& formula, FitOptions options = {});

    const Formula& formula() const noexcept { return formula_; }
    const CrossProduct& cross_products() const noexcept { return *xp_; }
    std::shared_ptr<const CrossProduct> shared_cross_products() const noexcept { return xp_; }
    bool is_aliased(const VariableId& v) const;

    /// Adds `v` (must be in the universe, not in the formula). An aliased
    /// column joins the formula with coefficient zero.
    SweepState added(const VariableId& v) const;
    /// Removes a non-intercept formula variable. Previously aliased columns are
    /// re-tried afterwards, since the removal may have freed them.
    SweepState removed(const VariableId& v) const;

    FitResult result() const;

private:
    SweepState() = default;
    bool try_sweep(std::size_t slot);

    std::shared_ptr<const CrossProduct> xp_;
    FitOptions options_;
    SquareMatrix m_;
    std::vector<bool> swept_;
    Formula formula_;
    std::vector<std::size_t> slots_;
};

struct Refit {
    SweepState state;
    FitResult fit;
};

Refit refit_add(const SweepState& state, const VariableId& v);
Refit refit_remove(const SweepState& state, const VariableId& v);

FitResult fit(const DesignMatrix& x, std::span<const double> y, FitOptions options = {});

/// Fitted values X b. Every formula variable must be a column of `x`.
std::vector<double> predict(const FitResult& fit, const DesignMatrix& x);

} // namespace fairstep
