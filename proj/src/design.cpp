#include "fairstep/design.hpp"

#include "fairstep/error.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <set>

namespace fairstep {

std::string to_string(VariableKind kind)
{
    switch (kind) {
    case VariableKind::Intercept:
        return "intercept";
    case VariableKind::AgeSexCell:
        return "age_sex_cell";
    case VariableKind::Hcc:
        return "hcc";
    }
    return "unknown";
}

VariableKind parse_variable_kind(const std::string& text)
{
    if (text == "intercept") {
        return VariableKind::Intercept;
    }
    if (text == "age_sex_cell") {
        return VariableKind::AgeSexCell;
    }
    if (text == "hcc") {
        return VariableKind::Hcc;
    }
    throw ConfigError("unknown variable kind '" + text + "'");
}

std::string to_string(const VariableId& v) { return to_string(v.kind) + ":" + v.key; }

std::size_t VariableIdHash::operator()(const VariableId& v) const noexcept
{
    return std::hash<std::string>{}(v.key) * 3 + static_cast<std::size_t>(v.kind);
}

std::vector<std::string> AgeBanding::cells() const
{
    std::vector<std::string> out;
    for (char sex : {'F', 'M'}) {
        for (int lo = 0; lo < top_band_start; lo += band_width) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%c_%02d_%02d", sex, lo, std::min(lo + band_width, top_band_start) - 1);
            out.emplace_back(buf);
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%c_%02d_PLUS", sex, top_band_start);
        out.emplace_back(buf);
    }
    return out;
}

std::string age_sex_cell(int age, Sex sex, const AgeBanding& banding)
{
    if (age < 0 || age > 120) {
        throw ConfigError("age " + std::to_string(age) + " outside [0,120]");
    }
    char buf[32];
    const char s = sex_code(sex);
    if (age >= banding.top_band_start) {
        std::snprintf(buf, sizeof buf, "%c_%02d_PLUS", s, banding.top_band_start);
    } else {
        int lo = (age / banding.band_width) * banding.band_width;
        std::snprintf(buf, sizeof buf, "%c_%02d_%02d", s, lo, std::min(lo + banding.band_width, banding.top_band_start) - 1);
    }
    return buf;
}

bool Formula::contains(const VariableId& v) const { return index_of(v).has_value(); }

std::optional<std::size_t> Formula::index_of(const VariableId& v) const
{
    auto it = std::find(variables.begin(), variables.end(), v);
    if (it == variables.end()) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - variables.begin());
}

void validate_formula(const Formula& formula, const AgeBanding& banding, bool require_cell_partition)
{
    if (formula.variables.empty() || formula.variables.front() != VariableId::intercept()) {
        throw ConfigError("formula must start with the intercept");
    }
    std::set<VariableId> seen;
    const auto all_cells = banding.cells();
    const std::set<std::string> cell_set(all_cells.begin(), all_cells.end());
    std::size_t cell_count = 0;
    for (const auto& v : formula.variables) {
        if (!seen.insert(v).second) {
            throw ConfigError("formula lists " + to_string(v) + " twice");
        }
        switch (v.kind) {
        case VariableKind::Intercept:
            if (v.key != "1") {
                throw ConfigError("intercept key must be \"1\"");
            }
            break;
        case VariableKind::AgeSexCell:
            if (!cell_set.contains(v.key)) {
                throw ConfigError("unknown age-sex cell '" + v.key + "'");
            }
            ++cell_count;
            break;
        case VariableKind::Hcc:
            if (v.key.empty()) {
                throw ConfigError("HCC variable with empty key");
            }
            break;
        }
    }
    if (std::count(formula.variables.begin(), formula.variables.end(), VariableId::intercept()) != 1) {
        throw ConfigError("formula must contain the intercept exactly once");
    }
    if (require_cell_partition && cell_count + 1 != all_cells.size()) {
        throw ConfigError("formula must include every age-sex cell except one reference cell (has " +
                          std::to_string(cell_count) + " of " + std::to_string(all_cells.size()) + ")");
    }
}

Formula demographic_formula(const AgeBanding& banding, const std::string& reference_cell,
                            const std::vector<std::string>& hccs)
{
    const auto cells = banding.cells();
    if (std::find(cells.begin(), cells.end(), reference_cell) == cells.end()) {
        throw ConfigError("unknown reference cell '" + reference_cell + "'");
    }
    Formula f;
    f.variables.push_back(VariableId::intercept());
    for (const auto& c : cells) {
        if (c != reference_cell) {
            f.variables.push_back(VariableId::cell(c));
        }
    }
    for (const auto& h : hccs) {
        f.variables.push_back(VariableId::hcc(h));
    }
    return f;
}

// --- CohortFeatures ------------------------------------------------------

CohortFeatures::CohortFeatures(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps, AgeBanding banding)
    : n_(records.size()), banding_(banding)
{
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto row = static_cast<std::uint32_t>(i);
        const auto& r = records[i];
        index_[VariableId::cell(age_sex_cell(r.age, r.sex, banding_))].push_back(row);
        for (const auto& h : assign_hccs(r, maps)) {
            index_[VariableId::hcc(h)].push_back(row);
        }
    }
}

std::span<const std::uint32_t> CohortFeatures::rows_for(const VariableId& v) const
{
    auto it = index_.find(v);
    if (it == index_.end()) {
        return {};
    }
    return it->second;
}

// --- DesignMatrix --------------------------------------------------------

DesignMatrix::DesignMatrix(std::size_t n, std::vector<std::shared_ptr<const DesignColumn>> columns)
    : n_(n), columns_(std::move(columns))
{
    if (columns_.empty() || columns_.front()->id.kind != VariableKind::Intercept) {
        throw ConfigError("design matrix must start with the intercept column");
    }
}

std::size_t DesignMatrix::column_support(std::size_t c) const
{
    return is_intercept(c) ? n_ : columns_.at(c)->rows.size();
}

std::optional<std::size_t> DesignMatrix::find(const VariableId& v) const
{
    for (std::size_t c = 0; c < columns_.size(); ++c) {
        if (columns_[c]->id == v) {
            return c;
        }
    }
    return std::nullopt;
}

Formula DesignMatrix::formula() const
{
    Formula f;
    for (const auto& c : columns_) {
        f.variables.push_back(c->id);
    }
    return f;
}

double DesignMatrix::value(std::size_t row, std::size_t col) const
{
    if (is_intercept(col)) {
        return 1.0;
    }
    const auto& rows = columns_.at(col)->rows;
    return std::binary_search(rows.begin(), rows.end(), static_cast<std::uint32_t>(row)) ? 1.0 : 0.0;
}

std::vector<double> DesignMatrix::dense() const
{
    const auto p = cols();
    std::vector<double> out(n_ * p, 0.0);
    for (std::size_t c = 0; c < p; ++c) {
        if (is_intercept(c)) {
            for (std::size_t i = 0; i < n_; ++i) {
                out[i * p + c] = 1.0;
            }
        } else {
            for (auto i : columns_[c]->rows) {
                out[static_cast<std::size_t>(i) * p + c] = 1.0;
            }
        }
    }
    return out;
}

bool DesignMatrix::operator==(const DesignMatrix& other) const
{
    if (n_ != other.n_ || columns_.size() != other.columns_.size()) {
        return false;
    }
    for (std::size_t c = 0; c < columns_.size(); ++c) {
        if (columns_[c]->id != other.columns_[c]->id || columns_[c]->rows != other.columns_[c]->rows) {
            return false;
        }
    }
    return true;
}

namespace {

std::shared_ptr<const DesignColumn> make_column(const VariableId& v, const CohortFeatures& features, const CodeMaps& maps)
{
    switch (v.kind) {
    case VariableKind::Intercept:
        return std::make_shared<const DesignColumn>(DesignColumn{v, {}});
    case VariableKind::AgeSexCell: {
        const auto cells = features.banding().cells();
        if (std::find(cells.begin(), cells.end(), v.key) == cells.end()) {
            throw ConfigError("unknown age-sex cell '" + v.key + "'");
        }
        break;
    }
    case VariableKind::Hcc:
        if (!maps.is_payment_hcc(v.key)) {
            throw ConfigError("formula references HCC '" + v.key + "' which is not a payment HCC");
        }
        break;
    }
    auto rows = features.rows_for(v);
    return std::make_shared<const DesignColumn>(DesignColumn{v, {rows.begin(), rows.end()}});
}

} // namespace

DesignMatrix build_design(const CohortFeatures& features, const Formula& formula, const CodeMaps& maps)
{
    if (features.rows() == 0) {
        throw ConfigError("cannot build a design matrix for an empty cohort");
    }
    validate_formula(formula, features.banding(), false);
    std::vector<std::shared_ptr<const DesignColumn>> cols;
    cols.reserve(formula.size());
    for (const auto& v : formula.variables) {
        cols.push_back(make_column(v, features, maps));
    }
    return DesignMatrix(features.rows(), std::move(cols));
}

DesignMatrix build_design(const std::vector<EnrolleeRecord>& records, const Formula& formula, const CodeMaps& maps,
                          const AgeBanding& banding)
{
    return build_design(CohortFeatures(records, maps, banding), formula, maps);
}

DesignMatrix with_column(const DesignMatrix& x, const VariableId& v, const CohortFeatures& features,
                         const CodeMaps& maps)
{
    if (x.find(v)) {
        throw ConfigError("design already contains " + to_string(v));
    }
    if (v.kind == VariableKind::Intercept) {
        throw ConfigError("the intercept cannot be appended");
    }
    if (features.rows() != x.rows()) {
        throw ConfigError("cohort features do not match the design's row count");
    }
    auto cols = x.column_storage();
    cols.push_back(make_column(v, features, maps));
    return DesignMatrix(x.rows(), std::move(cols));
}

DesignMatrix with_column(const DesignMatrix& x, const VariableId& v, const std::vector<EnrolleeRecord>& records,
                         const CodeMaps& maps, const AgeBanding& banding)
{
    return with_column(x, v, CohortFeatures(records, maps, banding), maps);
}

DesignMatrix without_column(const DesignMatrix& x, const VariableId& v)
{
    if (v.kind == VariableKind::Intercept) {
        throw ConfigError("the intercept cannot be removed");
    }
    auto idx = x.find(v);
    if (!idx) {
        throw ConfigError("design has no column " + to_string(v));
    }
    auto cols = x.column_storage();
    cols.erase(cols.begin() + static_cast<std::ptrdiff_t>(*idx));
    return DesignMatrix(x.rows(), std::move(cols));
}

} // namespace fairstep
