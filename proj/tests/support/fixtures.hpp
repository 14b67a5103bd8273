#pragma once

#include "fairstep/bundle.hpp"
#include "fairstep/cohort.hpp"
#include "fairstep/synthpop.hpp"

#include <algorithm>
#include <filesystem>
#include <unistd.h>
#include <string>

namespace fixtures {

inline std::filesystem::path source_dir()
{
    return FAIRSTEP_SOURCE_DIR;
}

inline std::filesystem::path data(const std::string& rel)
{
    return source_dir() / "data" / rel;
}

inline std::filesystem::path fixture(const std::string& rel)
{
    return source_dir() / "tests" / "fixtures" / rel;
}

inline std::filesystem::path scenario(const std::string& rel)
{
    return data("scenarios/figure1-default/" + rel);
}

inline fairstep::MapFiles toy_map_files()
{
    return {data("maps/hcc_map.csv"), data("maps/ccs_map.csv"), data("maps/hierarchy.csv"),
            data("maps/payment_hccs.csv")};
}

inline const fairstep::CodeMaps& toy_maps()
{
    static const fairstep::CodeMaps maps = fairstep::load_code_maps(toy_map_files());
    return maps;
}

inline const std::vector<fairstep::GroupDefinition>& toy_groups()
{
    static const auto groups = fairstep::load_group_definitions(data("groups/default.json"));
    return groups;
}

inline fairstep::EnrolleeRecord person(std::string id, int age, fairstep::Sex sex, std::vector<std::string> codes,
                                       double spend, std::string region = "NE")
{
    std::sort(codes.begin(), codes.end());
    codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
    return {std::move(id), age, sex, std::move(region), std::move(codes), spend};
}

inline std::filesystem::path scratch_root()
{
    return std::filesystem::temp_directory_path() / ("fairstep-test-" + std::to_string(::getpid()));
}

inline struct ScratchCleanup {
    ~ScratchCleanup()
    {
        std::error_code ec;
        std::filesystem::remove_all(scratch_root(), ec);
    }
} scratch_cleanup;

/// Fresh per-process scratch directory.
inline std::filesystem::path scratch(const std::string& name)
{
    auto dir = scratch_root() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Bundle of a reduced shipped scenario, built once per process.
inline const std::filesystem::path& scenario_bundle()
{
    static const std::filesystem::path dir = [] {
        auto spec = fairstep::load_synthetic_spec(scenario("spec.json"));
        spec.n = 20000;
        fairstep::EnrolleeTable table{fairstep::generate(spec), true};
        auto out = scratch("bundle");
        fairstep::create_bundle(table, toy_map_files(), out, data("groups/default.json"));
        return out;
    }();
    return dir;
}

} // namespace fixtures
