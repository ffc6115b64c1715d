#include "capl/manifest.hpp"

#include <fstream>

#include <json.hpp>

namespace capl {

const char* version_string() {
#ifdef CAPL_VERSION_STRING
    return CAPL_VERSION_STRING;
#else
    return "capl-kit-0.1.0";
#endif
}

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["command"] = m.command;
    j["config"] = m.config_json.empty() ? nlohmann::json(nullptr)
                                        : nlohmann::json::parse(m.config_json);
    j["seed"] = m.seed;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    j["version"] = version_string();
    j["duration_seconds"] = m.duration_seconds;
    std::ofstream os(dir / "run_manifest.json");
    os << j.dump(2) << '\n';
}

}  // namespace capl
