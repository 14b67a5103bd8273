#pragma once

#include "fairstep/cohort.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace fairstep {

/// Paths to the four code-map inputs; `payment_hccs` is optional.
struct MapFiles {
    std::filesystem::path hcc_map;
    std::filesystem::path ccs_map;
    std::filesystem::path hierarchy;
    std::optional<std::filesystem::path> payment_hccs;
};

CodeMaps load_code_maps(const MapFiles& files);

/// Validated cohort on disk: manifest.json, enrollees.csv (post-exclusion),
/// copies of the maps and optionally groups.json.
struct Bundle {
    std::filesystem::path dir;
    std::vector<EnrolleeRecord> records;
    CodeMaps maps;
    std::vector<GroupDefinition> groups;
    ExclusionReport exclusions;
    nlohmann::json manifest;
};

inline constexpr int kBundleFormatVersion = 1;

/// Loads and validates inputs, applies exclusions and writes the bundle.
Bundle create_bundle(const std::filesystem::path& enrollees, const MapFiles& maps, const std::filesystem::path& out,
                     const std::optional<std::filesystem::path>& groups = std::nullopt);

/// Same, from already-loaded records.
Bundle create_bundle(const EnrolleeTable& table, const MapFiles& maps, const std::filesystem::path& out,
                     const std::optional<std::filesystem::path>& groups = std::nullopt);

Bundle load_bundle(const std::filesystem::path& dir);

} // namespace fairstep
