#pragma once

#include "fairstep/cohort.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fairstep {

enum class VariableKind : std::uint8_t { Intercept, AgeSexCell, Hcc };

struct VariableId {
    VariableKind kind = VariableKind::Intercept;
    std::string key = "1";

    static VariableId intercept() { return {VariableKind::Intercept, "1"}; }
    static VariableId cell(std::string label) { return {VariableKind::AgeSexCell, std::move(label)}; }
    static VariableId hcc(std::string id) { return {VariableKind::Hcc, std::move(id)}; }

    auto operator<=>(const VariableId&) const = default;
    bool operator==(const VariableId&) const = default;
};

std::string to_string(VariableKind kind);
VariableKind parse_variable_kind(const std::string& text);
/// "kind:key", e.g. "hcc:HCC019".
std::string to_string(const VariableId& v);

struct VariableIdHash {
    std::size_t operator()(const VariableId& v) const noexcept;
};

/// Age bands of `band_width` years starting at 0, with everything from
/// `top_band_start` up in one open band, crossed with sex.
struct AgeBanding {
    int band_width = 5;
    int top_band_start = 85;

    /// Labels in canonical order: all female bands, then all male bands.
    std::vector<std::string> cells() const;
};

/// Cell label such as "F_35_39" or "M_85_PLUS". Throws ConfigError for ages
/// outside [0,120].
std::string age_sex_cell(int age, Sex sex, const AgeBanding& banding = {});

/// Ordered right-hand side of a payment formula.
struct Formula {
    std::vector<VariableId> variables;

    bool contains(const VariableId& v) const;
    std::optional<std::size_t> index_of(const VariableId& v) const;
    std::size_t size() const { return variables.size(); }
    bool operator==(const Formula&) const = default;
};

/// Structural checks: intercept first and only once, no duplicates, cell
/// labels valid under `banding`. With `require_cell_partition`, the cells
/// must be the full partition minus exactly one reference cell.
void validate_formula(const Formula& formula, const AgeBanding& banding, bool require_cell_partition);

/// Intercept plus every cell except `reference_cell`, followed by `hccs`.
Formula demographic_formula(const AgeBanding& banding, const std::string& reference_cell,
                            const std::vector<std::string>& hccs = {});

/// Per-variable row lists for a cohort: which rows fall into each age-sex cell
/// and which rows carry each (hierarchy-filtered) HCC.
class CohortFeatures {
public:
    CohortFeatures(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps, AgeBanding banding = {});

    std::size_t rows() const noexcept { return n_; }
    const AgeBanding& banding() const noexcept { return banding_; }
    /// Sorted row indices carrying `v`; empty for unseen variables.
    std::span<const std::uint32_t> rows_for(const VariableId& v) const;

private:
    std::size_t n_;
    AgeBanding banding_;
    std::unordered_map<VariableId, std::vector<std::uint32_t>, VariableIdHash> index_;
};

struct DesignColumn {
    VariableId id;
    /// Sorted rows holding a one. Empty for the intercept, which is implicit.
    std::vector<std::uint32_t> rows;
};

/// Immutable n x p binary design stored column-wise as sorted row lists.
/// Column 0 is always the intercept. Derived matrices share column storage.
class DesignMatrix {
public:
    DesignMatrix(std::size_t n, std::vector<std::shared_ptr<const DesignColumn>> columns);

    std::size_t rows() const noexcept { return n_; }
    std::size_t cols() const noexcept { return columns_.size(); }
    const VariableId& column_id(std::size_t c) const { return columns_.at(c)->id; }
    bool is_intercept(std::size_t c) const { return columns_.at(c)->id.kind == VariableKind::Intercept; }
    /// Rows with a one in column c; not meaningful for the intercept.
    std::span<const std::uint32_t> column_rows(std::size_t c) const { return columns_.at(c)->rows; }
    std::size_t column_support(std::size_t c) const;
    std::optional<std::size_t> find(const VariableId& v) const;
    Formula formula() const;
    double value(std::size_t row, std::size_t col) const;
    /// Row-major dense copy; intended for tests and small exports.
    std::vector<double> dense() const;
    const std::vector<std::shared_ptr<const DesignColumn>>& column_storage() const noexcept { return columns_; }

    bool operator==(const DesignMatrix& other) const;

private:
    std::size_t n_;
    std::vector<std::shared_ptr<const DesignColumn>> columns_;
};

DesignMatrix build_design(const CohortFeatures& features, const Formula& formula, const CodeMaps& maps);
DesignMatrix build_design(const std::vector<EnrolleeRecord>& records, const Formula& formula,
                          const CodeMaps& maps, const AgeBanding& banding = {});

DesignMatrix with_column(const DesignMatrix& x, const VariableId& v, const CohortFeatures& features,
                         const CodeMaps& maps);
DesignMatrix with_column(const DesignMatrix& x, const VariableId& v, const std::vector<EnrolleeRecord>& records,
                         const CodeMaps& maps, const AgeBanding& banding = {});
DesignMatrix without_column(const DesignMatrix& x, const VariableId& v);

} // namespace fairstep
