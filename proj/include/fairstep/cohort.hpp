#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace fairstep {

enum class Sex : std::uint8_t { Female, Male };

char sex_code(Sex sex);
Sex parse_sex(const std::string& code);

/// One enrollee. `diagnosis_codes` is kept sorted and de-duplicated.
struct EnrolleeRecord {
    std::string person_id;
    int age = 0;
    Sex sex = Sex::Female;
    std::optional<std::string> region;
    std::vector<std::string> diagnosis_codes;
    /// Annual spending in USD; absent when the claims field was empty.
    std::optional<double> spend_total;

    bool operator==(const EnrolleeRecord&) const = default;
};

struct HierarchyRule {
    std::string dominant;
    std::set<std::string> suppressed;
};

/// ICD->HCC (partial) and ICD->CCS (total) mappings plus hierarchy rules.
/// Construct through `CodeMaps::validated` or the loaders so the invariants hold.
struct CodeMaps {
    std::unordered_map<std::string, std::string> icd_to_hcc;
    std::unordered_map<std::string, std::string> icd_to_ccs;
    std::vector<HierarchyRule> hierarchies;
    /// HCCs eligible for formulas, in the order they should appear.
    std::vector<std::string> payment_hccs;

    /// HCC ids that appear as a mapping target or in `payment_hccs`.
    std::set<std::string> hcc_space() const;
    std::set<std::string> ccs_space() const;
    bool is_payment_hcc(const std::string& hcc) const;

    /// Throws ConfigError when an invariant is violated: ICDs mapped to an HCC
    /// but not to a CCS, hierarchy HCCs outside the code space, self-suppression,
    /// or a suppression cycle.
    void validate() const;
};

struct GroupDefinition {
    std::string group_id;
    std::set<std::string> ccs_categories;
};

/// Counts of removed records per reason ("missing_region", "missing_claims",
/// "negative_claims"). Only non-zero reasons are present.
struct ExclusionReport {
    std::size_t input_count = 0;
    std::size_t kept_count = 0;
    std::map<std::string, std::size_t> removed_by_reason;

    std::size_t removed() const { return input_count - kept_count; }
};

struct ExclusionResult {
    std::vector<EnrolleeRecord> kept;
    ExclusionReport report;
};

struct EnrolleeTable {
    std::vector<EnrolleeRecord> records;
    /// True when the source declared a region column.
    bool region_declared = true;
};

// --- ingestion -----------------------------------------------------------

EnrolleeTable load_enrollees(std::istream& in, const std::string& source_name = "<enrollees>");
EnrolleeTable load_enrollees(const std::filesystem::path& path);
void write_enrollees(std::ostream& out, const std::vector<EnrolleeRecord>& records, bool with_region = true);
/// Rows only, no header; for streaming in chunks.
void write_enrollee_rows(std::ostream& out, const std::vector<EnrolleeRecord>& records, bool with_region = true);

CodeMaps load_code_maps(const std::filesystem::path& hcc_map,
                        const std::filesystem::path& ccs_map,
                        const std::filesystem::path& hierarchy,
                        const std::optional<std::filesystem::path>& payment_hccs = std::nullopt);
CodeMaps load_code_maps(std::istream& hcc_map, std::istream& ccs_map, std::istream& hierarchy,
                        std::istream* payment_hccs = nullptr);

/// Groups document: a JSON object {group_id, ccs_categories} or an array of them.
std::vector<GroupDefinition> parse_group_definitions(const std::string& json_text);
std::vector<GroupDefinition> load_group_definitions(const std::filesystem::path& path);
void validate_groups(const std::vector<GroupDefinition>& groups, const CodeMaps& maps);

// --- cohort operations ---------------------------------------------------

/// Drops records with a missing region (when `region_declared`), missing
/// spend, or negative spend. Relative order is preserved.
ExclusionResult apply_exclusions(const std::vector<EnrolleeRecord>& records, bool region_declared = true);

/// Hierarchy-filtered HCC set for one record.
std::set<std::string> assign_hccs(const EnrolleeRecord& record, const CodeMaps& maps);
/// HCC image before hierarchy filtering.
std::set<std::string> raw_hccs(const EnrolleeRecord& record, const CodeMaps& maps);
/// CCS categories of a record; throws ConfigError naming an unmapped code.
std::set<std::string> assign_ccs(const EnrolleeRecord& record, const CodeMaps& maps);

std::vector<bool> group_membership(const std::vector<EnrolleeRecord>& records,
                                   const GroupDefinition& group,
                                   const CodeMaps& maps);

/// HCCs fed by at least one ICD whose CCS category belongs to the group.
std::set<std::string> group_relevant_hccs(const GroupDefinition& group, const CodeMaps& maps);

/// Spend column of an excluded cohort; throws if any record lacks spend.
std::vector<double> spend_vector(const std::vector<EnrolleeRecord>& records);

} // namespace fairstep
