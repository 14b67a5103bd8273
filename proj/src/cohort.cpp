#include "fairstep/cohort.hpp"

#include "fairstep/csv.hpp"
#include "fairstep/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_set>

namespace fairstep {

namespace {

std::ifstream open_input(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return in;
}

std::string trim(const std::string& s)
{
    auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) {
        return {};
    }
    auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_codes(const std::string& field)
{
    std::vector<std::string> codes;
    std::size_t start = 0;
    while (start <= field.size()) {
        auto end = field.find(';', start);
        if (end == std::string::npos) {
            end = field.size();
        }
        auto code = trim(field.substr(start, end - start));
        if (!code.empty()) {
            codes.push_back(std::move(code));
        }
        start = end + 1;
    }
    std::sort(codes.begin(), codes.end());
    codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
    return codes;
}

// Reads a two-column mapping file; returns (key, value) pairs in file order.
std::vector<std::pair<std::string, std::string>> read_pairs(std::istream& in, const std::string& source,
                                                            const std::string& key_col, const std::string& value_col)
{
    csv::Reader reader(in, source);
    auto header = csv::read_header(reader, {key_col, value_col});
    auto key_idx = *header.index_of(key_col);
    auto value_idx = *header.index_of(value_col);
    std::vector<std::pair<std::string, std::string>> rows;
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        if (fields.size() == 1 && trim(fields[0]).empty()) {
            continue;
        }
        if (fields.size() != header.names.size()) {
            throw IngestError(source, reader.line(), "<record>",
                              "expected " + std::to_string(header.names.size()) + " fields, found " +
                                  std::to_string(fields.size()));
        }
        auto key = trim(fields[key_idx]);
        auto value = trim(fields[value_idx]);
        if (key.empty()) {
            throw IngestError(source, reader.line(), key_col, "empty value");
        }
        if (value.empty()) {
            throw IngestError(source, reader.line(), value_col, "empty value");
        }
        rows.emplace_back(std::move(key), std::move(value));
    }
    return rows;
}

} // namespace

char sex_code(Sex sex) { return sex == Sex::Female ? 'F' : 'M'; }

Sex parse_sex(const std::string& code)
{
    if (code == "F") {
        return Sex::Female;
    }
    if (code == "M") {
        return Sex::Male;
    }
    throw ConfigError("sex must be F or M, got '" + code + "'");
}

// --- CodeMaps ------------------------------------------------------------

std::set<std::string> CodeMaps::hcc_space() const
{
    std::set<std::string> space(payment_hccs.begin(), payment_hccs.end());
    for (const auto& [icd, hcc] : icd_to_hcc) {
        space.insert(hcc);
    }
    return space;
}

std::set<std::string> CodeMaps::ccs_space() const
{
    std::set<std::string> space;
    for (const auto& [icd, ccs] : icd_to_ccs) {
        space.insert(ccs);
    }
    return space;
}

bool CodeMaps::is_payment_hcc(const std::string& hcc) const
{
    return std::find(payment_hccs.begin(), payment_hccs.end(), hcc) != payment_hccs.end();
}

void CodeMaps::validate() const
{
    std::vector<std::string> missing;
    for (const auto& [icd, hcc] : icd_to_hcc) {
        if (!icd_to_ccs.contains(icd)) {
            missing.push_back(icd);
        }
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        throw ConfigError("ICD code '" + missing.front() + "' maps to an HCC but has no CCS category");
    }
    auto space = hcc_space();
    std::map<std::string, std::set<std::string>> edges;
    for (const auto& rule : hierarchies) {
        if (!space.contains(rule.dominant)) {
            throw ConfigError("hierarchy references unknown HCC '" + rule.dominant + "'");
        }
        for (const auto& s : rule.suppressed) {
            if (!space.contains(s)) {
                throw ConfigError("hierarchy references unknown HCC '" + s + "'");
            }
            if (s == rule.dominant) {
                throw ConfigError("HCC '" + s + "' suppresses itself");
            }
            edges[rule.dominant].insert(s);
        }
    }
    // Cycle check by depth-first search with colouring.
    std::map<std::string, int> colour;
    std::function<void(const std::string&)> visit = [&](const std::string& node) {
        colour[node] = 1;
        if (auto it = edges.find(node); it != edges.end()) {
            for (const auto& next : it->second) {
                if (colour[next] == 1) {
                    throw ConfigError("hierarchy rules form a cycle through '" + next + "'");
                }
                if (colour[next] == 0) {
                    visit(next);
                }
            }
        }
        colour[node] = 2;
    };
    for (const auto& [node, _] : edges) {
        if (colour[node] == 0) {
            visit(node);
        }
    }
    std::unordered_set<std::string> seen;
    for (const auto& hcc : payment_hccs) {
        if (!seen.insert(hcc).second) {
            throw ConfigError("payment HCC '" + hcc + "' listed twice");
        }
    }
}

// --- ingestion -----------------------------------------------------------

EnrolleeTable load_enrollees(std::istream& in, const std::string& source_name)
{
    csv::Reader reader(in, source_name);
    auto header = csv::read_header(reader, {"person_id", "age", "sex", "diagnosis_codes", "spend_total"});
    const auto id_idx = *header.index_of("person_id");
    const auto age_idx = *header.index_of("age");
    const auto sex_idx = *header.index_of("sex");
    const auto codes_idx = *header.index_of("diagnosis_codes");
    const auto spend_idx = *header.index_of("spend_total");
    const auto region_idx = header.index_of("region");

    EnrolleeTable table;
    table.region_declared = region_idx.has_value();
    std::unordered_set<std::string> ids;
    std::vector<std::string> fields;
    while (reader.next(fields)) {
        const auto line = reader.line();
        if (fields.size() == 1 && fields[0].empty()) {
            continue;
        }
        if (fields.size() != header.names.size()) {
            throw IngestError(source_name, line, "<record>",
                              "expected " + std::to_string(header.names.size()) + " fields, found " +
                                  std::to_string(fields.size()));
        }
        EnrolleeRecord rec;
        rec.person_id = trim(fields[id_idx]);
        if (rec.person_id.empty()) {
            throw IngestError(source_name, line, "person_id", "empty person_id");
        }
        if (!ids.insert(rec.person_id).second) {
            throw IngestError(source_name, line, "person_id", "duplicate person_id '" + rec.person_id + "'");
        }

        const auto age_text = trim(fields[age_idx]);
        int age = -1;
        auto [ptr, ec] = std::from_chars(age_text.data(), age_text.data() + age_text.size(), age);
        if (ec != std::errc() || ptr != age_text.data() + age_text.size() || age < 0 || age > 120) {
            throw IngestError(source_name, line, "age", "expected integer years in [0,120], got '" + age_text + "'");
        }
        rec.age = age;

        const auto sex_text = trim(fields[sex_idx]);
        if (sex_text == "F") {
            rec.sex = Sex::Female;
        } else if (sex_text == "M") {
            rec.sex = Sex::Male;
        } else {
            throw IngestError(source_name, line, "sex", "expected F or M, got '" + sex_text + "'");
        }

        if (region_idx) {
            auto region = trim(fields[*region_idx]);
            if (!region.empty()) {
                rec.region = std::move(region);
            }
        }

        rec.diagnosis_codes = split_codes(fields[codes_idx]);

        const auto spend_text = trim(fields[spend_idx]);
        if (!spend_text.empty()) {
            double spend = 0.0;
            auto [sptr, sec] = std::from_chars(spend_text.data(), spend_text.data() + spend_text.size(), spend);
            if (sec != std::errc() || sptr != spend_text.data() + spend_text.size() || !std::isfinite(spend)) {
                throw IngestError(source_name, line, "spend_total", "expected a number, got '" + spend_text + "'");
            }
            rec.spend_total = spend;
        }
        table.records.push_back(std::move(rec));
    }
    return table;
}

EnrolleeTable load_enrollees(const std::filesystem::path& path)
{
    auto in = open_input(path);
    return load_enrollees(in, path.string());
}

void write_enrollees(std::ostream& out, const std::vector<EnrolleeRecord>& records, bool with_region)
{
    out << (with_region ? "person_id,age,sex,region,diagnosis_codes,spend_total\n"
                        : "person_id,age,sex,diagnosis_codes,spend_total\n");
    write_enrollee_rows(out, records, with_region);
}

void write_enrollee_rows(std::ostream& out, const std::vector<EnrolleeRecord>& records, bool with_region)
{
    char buf[64];
    for (const auto& r : records) {
        std::string codes;
        for (std::size_t i = 0; i < r.diagnosis_codes.size(); ++i) {
            if (i) {
                codes.push_back(';');
            }
            codes += r.diagnosis_codes[i];
        }
        out << csv::quote(r.person_id) << ',' << r.age << ',' << sex_code(r.sex) << ',';
        if (with_region) {
            out << csv::quote(r.region.value_or("")) << ',';
        }
        out << '"' << codes << "\",";
        if (r.spend_total) {
            std::snprintf(buf, sizeof buf, "%.2f", *r.spend_total);
            out << buf;
        }
        out << '\n';
    }
}

CodeMaps load_code_maps(std::istream& hcc_map, std::istream& ccs_map, std::istream& hierarchy,
                        std::istream* payment_hccs)
{
    CodeMaps maps;
    const auto hcc_rows = read_pairs(hcc_map, "hcc_map", "icd", "hcc");
    for (const auto& [icd, hcc] : hcc_rows) {
        auto [it, inserted] = maps.icd_to_hcc.emplace(icd, hcc);
        if (!inserted && it->second != hcc) {
            throw ConfigError("ICD '" + icd + "' maps to two HCCs in the HCC map");
        }
    }
    for (auto& [icd, ccs] : read_pairs(ccs_map, "ccs_map", "icd", "ccs")) {
        auto [it, inserted] = maps.icd_to_ccs.emplace(icd, ccs);
        if (!inserted && it->second != ccs) {
            throw ConfigError("ICD '" + icd + "' maps to two CCS categories");
        }
    }
    std::map<std::string, std::size_t> rule_index;
    for (auto& [dominant, suppressed] : read_pairs(hierarchy, "hierarchy", "dominant_hcc", "suppressed_hcc")) {
        auto [it, inserted] = rule_index.emplace(dominant, maps.hierarchies.size());
        if (inserted) {
            maps.hierarchies.push_back({dominant, {}});
        }
        maps.hierarchies[it->second].suppressed.insert(suppressed);
    }
    if (payment_hccs) {
        csv::Reader reader(*payment_hccs, "payment_hccs");
        auto header = csv::read_header(reader, {"hcc"});
        auto idx = *header.index_of("hcc");
        std::vector<std::string> fields;
        while (reader.next(fields)) {
            if (fields.size() == 1 && trim(fields[0]).empty()) {
                continue;
            }
            maps.payment_hccs.push_back(trim(fields.at(idx)));
        }
    } else {
        // Default: every mapped HCC in first-appearance order of the HCC map file.
        std::vector<std::string> order;
        std::unordered_set<std::string> seen;
        for (const auto& [icd, hcc] : hcc_rows) {
            if (seen.insert(hcc).second) {
                order.push_back(hcc);
            }
        }
        maps.payment_hccs = std::move(order);
    }
    maps.validate();
    return maps;
}

CodeMaps load_code_maps(const std::filesystem::path& hcc_map, const std::filesystem::path& ccs_map,
                        const std::filesystem::path& hierarchy,
                        const std::optional<std::filesystem::path>& payment_hccs)
{
    auto hcc_in = open_input(hcc_map);
    auto ccs_in = open_input(ccs_map);
    auto hier_in = open_input(hierarchy);
    if (payment_hccs) {
        auto pay_in = open_input(*payment_hccs);
        return load_code_maps(hcc_in, ccs_in, hier_in, &pay_in);
    }
    return load_code_maps(hcc_in, ccs_in, hier_in, nullptr);
}

std::vector<GroupDefinition> parse_group_definitions(const std::string& json_text)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("group definitions: ") + e.what());
    }
    auto parse_one = [](const nlohmann::json& j) {
        if (!j.is_object() || !j.contains("group_id") || !j.contains("ccs_categories")) {
            throw ConfigError("group definition needs 'group_id' and 'ccs_categories'");
        }
        GroupDefinition g;
        g.group_id = j.at("group_id").get<std::string>();
        for (const auto& c : j.at("ccs_categories")) {
            g.ccs_categories.insert(c.is_string() ? c.get<std::string>() : c.dump());
        }
        if (g.group_id.empty()) {
            throw ConfigError("group definition has an empty group_id");
        }
        if (g.ccs_categories.empty()) {
            throw ConfigError("group '" + g.group_id + "' has no CCS categories");
        }
        return g;
    };
    std::vector<GroupDefinition> groups;
    if (doc.is_array()) {
        for (const auto& j : doc) {
            groups.push_back(parse_one(j));
        }
    } else {
        groups.push_back(parse_one(doc));
    }
    std::unordered_set<std::string> ids;
    for (const auto& g : groups) {
        if (!ids.insert(g.group_id).second) {
            throw ConfigError("group '" + g.group_id + "' defined twice");
        }
    }
    return groups;
}

std::vector<GroupDefinition> load_group_definitions(const std::filesystem::path& path)
{
    auto in = open_input(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_group_definitions(ss.str());
}

void validate_groups(const std::vector<GroupDefinition>& groups, const CodeMaps& maps)
{
    auto space = maps.ccs_space();
    for (const auto& g : groups) {
        for (const auto& c : g.ccs_categories) {
            if (!space.contains(c)) {
                throw ConfigError("group '" + g.group_id + "' references CCS category '" + c +
                                  "' absent from the CCS map");
            }
        }
    }
}

// --- cohort operations ---------------------------------------------------

ExclusionResult apply_exclusions(const std::vector<EnrolleeRecord>& records, bool region_declared)
{
    ExclusionResult result;
    result.report.input_count = records.size();
    for (const auto& r : records) {
        const char* reason = nullptr;
        if (region_declared && !r.region) {
            reason = "missing_region";
        } else if (!r.spend_total) {
            reason = "missing_claims";
        } else if (*r.spend_total < 0.0) {
            reason = "negative_claims";
        }
        if (reason) {
            ++result.report.removed_by_reason[reason];
        } else {
            result.kept.push_back(r);
        }
    }
    result.report.kept_count = result.kept.size();
    return result;
}

std::set<std::string> raw_hccs(const EnrolleeRecord& record, const CodeMaps& maps)
{
    std::set<std::string> out;
    for (const auto& code : record.diagnosis_codes) {
        if (auto it = maps.icd_to_hcc.find(code); it != maps.icd_to_hcc.end()) {
            out.insert(it->second);
        }
    }
    return out;
}

std::set<std::string> assign_hccs(const EnrolleeRecord& record, const CodeMaps& maps)
{
    const auto unfiltered = raw_hccs(record, maps);
    auto current = unfiltered;
    // Dominance is judged against the unfiltered set, so a suppressed HCC
    // cannot release its own suppressed members.
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& rule : maps.hierarchies) {
            if (!unfiltered.contains(rule.dominant)) {
                continue;
            }
            for (const auto& s : rule.suppressed) {
                changed |= current.erase(s) > 0;
            }
        }
    }
    return current;
}

std::set<std::string> assign_ccs(const EnrolleeRecord& record, const CodeMaps& maps)
{
    std::set<std::string> out;
    for (const auto& code : record.diagnosis_codes) {
        auto it = maps.icd_to_ccs.find(code);
        if (it == maps.icd_to_ccs.end()) {
            throw ConfigError("ICD code '" + code + "' (person " + record.person_id +
                              ") has no CCS category; the CCS map may be stale");
        }
        out.insert(it->second);
    }
    return out;
}

std::vector<bool> group_membership(const std::vector<EnrolleeRecord>& records, const GroupDefinition& group,
                                   const CodeMaps& maps)
{
    if (records.empty()) {
        throw ConfigError("group membership requested for an empty cohort");
    }
    std::vector<bool> member(records.size(), false);
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (const auto& ccs : assign_ccs(records[i], maps)) {
            if (group.ccs_categories.contains(ccs)) {
                member[i] = true;
                break;
            }
        }
    }
    return member;
}

std::set<std::string> group_relevant_hccs(const GroupDefinition& group, const CodeMaps& maps)
{
    std::set<std::string> out;
    for (const auto& [icd, hcc] : maps.icd_to_hcc) {
        auto it = maps.icd_to_ccs.find(icd);
        if (it != maps.icd_to_ccs.end() && group.ccs_categories.contains(it->second)) {
            out.insert(hcc);
        }
    }
    return out;
}

std::vector<double> spend_vector(const std::vector<EnrolleeRecord>& records)
{
    std::vector<double> y;
    y.reserve(records.size());
    for (const auto& r : records) {
        if (!r.spend_total) {
            throw ConfigError("person " + r.person_id + " has no spend; apply exclusions first");
        }
        y.push_back(*r.spend_total);
    }
    return y;
}

} // namespace fairstep
