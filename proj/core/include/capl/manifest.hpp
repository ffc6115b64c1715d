#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace capl {

/// Library version, git-describe style when available at configure time.
const char* version_string();

/// Every CLI command drops exactly one of these into its output directory.
struct RunManifest {
    std::string command;
    std::string config_json;  // echo of the effective configuration
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double duration_seconds = 0.0;
};

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);

}  // namespace capl
