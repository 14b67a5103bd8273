#include "fairstep/bundle.hpp"

#include "fairstep/error.hpp"

#include <fstream>

namespace fairstep {

namespace fs = std::filesystem;
using nlohmann::json;

CodeMaps load_code_maps(const MapFiles& files)
{
    return load_code_maps(files.hcc_map, files.ccs_map, files.hierarchy, files.payment_hccs);
}

namespace {

void check_codes_mapped(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps)
{
    for (const auto& r : records)
        for (const auto& code : r.diagnosis_codes)
            if (!maps.icd_to_ccs.contains(code))
                throw ConfigError("person " + r.person_id + ": diagnosis code '" + code + "' is not in the CCS map");
}

void copy_into(const fs::path& from, const fs::path& to)
{
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

} // namespace

Bundle create_bundle(const fs::path& enrollees, const MapFiles& maps, const fs::path& out,
                     const std::optional<fs::path>& groups)
{
    return create_bundle(load_enrollees(enrollees), maps, out, groups);
}

Bundle create_bundle(const EnrolleeTable& table, const MapFiles& map_files, const fs::path& out,
                     const std::optional<fs::path>& groups_path)
{
    Bundle b;
    b.dir = out;
    b.maps = load_code_maps(map_files);
    check_codes_mapped(table.records, b.maps);
    if (groups_path) {
        b.groups = load_group_definitions(*groups_path);
        validate_groups(b.groups, b.maps);
    }
    ExclusionResult ex = apply_exclusions(table.records, table.region_declared);
    b.records = std::move(ex.kept);
    b.exclusions = ex.report;

    fs::create_directories(out);
    {
        std::ofstream f(out / "enrollees.csv");
        if (!f) throw ConfigError("cannot write " + (out / "enrollees.csv").string());
        write_enrollees(f, b.records, table.region_declared);
    }
    copy_into(map_files.hcc_map, out / "hcc_map.csv");
    copy_into(map_files.ccs_map, out / "ccs_map.csv");
    copy_into(map_files.hierarchy, out / "hierarchy.csv");
    json files = {{"enrollees", "enrollees.csv"},
                  {"hcc_map", "hcc_map.csv"},
                  {"ccs_map", "ccs_map.csv"},
                  {"hierarchy", "hierarchy.csv"}};
    if (map_files.payment_hccs) {
        copy_into(*map_files.payment_hccs, out / "payment_hccs.csv");
        files["payment_hccs"] = "payment_hccs.csv";
    }
    if (groups_path) {
        copy_into(*groups_path, out / "groups.json");
        files["groups"] = "groups.json";
    }
    b.manifest = {{"format", "fairstep-bundle"},
                  {"version", kBundleFormatVersion},
                  {"enrollee_count", b.records.size()},
                  {"region_declared", table.region_declared},
                  {"exclusions",
                   {{"input_count", b.exclusions.input_count},
                    {"kept_count", b.exclusions.kept_count},
                    {"removed_by_reason", b.exclusions.removed_by_reason}}},
                  {"files", files}};
    std::ofstream m(out / "manifest.json");
    if (!m) throw ConfigError("cannot write " + (out / "manifest.json").string());
    m << b.manifest.dump(2) << '\n';
    return b;
}

Bundle load_bundle(const fs::path& dir)
{
    Bundle b;
    b.dir = dir;
    std::ifstream m(dir / "manifest.json");
    if (!m) throw ConfigError(dir.string() + " is not a bundle (no manifest.json)");
    try {
        b.manifest = json::parse(m);
        if (b.manifest.at("format") != "fairstep-bundle") throw ConfigError("unknown bundle format");
        if (b.manifest.at("version").get<int>() != kBundleFormatVersion)
            throw ConfigError("unsupported bundle version " + b.manifest.at("version").dump());
        const json& files = b.manifest.at("files");
        MapFiles mf{dir / files.at("hcc_map").get<std::string>(), dir / files.at("ccs_map").get<std::string>(),
                    dir / files.at("hierarchy").get<std::string>(), std::nullopt};
        if (files.contains("payment_hccs")) mf.payment_hccs = dir / files.at("payment_hccs").get<std::string>();
        b.maps = load_code_maps(mf);
        EnrolleeTable table = load_enrollees(dir / files.at("enrollees").get<std::string>());
        b.records = std::move(table.records);
        if (b.records.size() != b.manifest.at("enrollee_count").get<std::size_t>())
            throw ConfigError("bundle enrollee count does not match its manifest");
        check_codes_mapped(b.records, b.maps);
        if (files.contains("groups")) {
            b.groups = load_group_definitions(dir / files.at("groups").get<std::string>());
            validate_groups(b.groups, b.maps);
        }
        const json& ex = b.manifest.at("exclusions");
        b.exclusions.input_count = ex.at("input_count").get<std::size_t>();
        b.exclusions.kept_count = ex.at("kept_count").get<std::size_t>();
        b.exclusions.removed_by_reason = ex.at("removed_by_reason").get<std::map<std::string, std::size_t>>();
    } catch (const json::exception& e) {
        throw ConfigError((dir / "manifest.json").string() + ": " + e.what());
    }
    return b;
}

} // namespace fairstep
