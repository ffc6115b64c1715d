#include "capl/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "capl/caplt_io.hpp"
#include "capl/rng.hpp"

namespace capl {

void write_sample(const std::filesystem::path& dir, const std::string& id,
                  const SyntheticSample& s) {
    std::filesystem::create_directories(dir);
    write_caplt(dir / (id + "_image.caplt"), s.image);
    write_caplt(dir / (id + "_instances.caplt"), s.instances);
    write_caplt(dir / (id + "_classes.caplt"), s.classes);
    write_caplt(dir / (id + "_hv.caplt"), s.hv_gt);
    write_caplt(dir / (id + "_np.caplt"), s.np_gt);
}

SyntheticSample read_sample(const std::filesystem::path& dir, const std::string& id) {
    SyntheticSample s;
    s.image = read_caplt_tensor(dir / (id + "_image.caplt"));
    s.instances = read_caplt_instances(dir / (id + "_instances.caplt"));
    s.classes = read_caplt_classes(dir / (id + "_classes.caplt"));
    s.hv_gt = read_caplt_tensor(dir / (id + "_hv.caplt"));
    s.np_gt = read_caplt_tensor(dir / (id + "_np.caplt"));
    return s;
}

namespace {

nlohmann::json spec_json(const DomainSpec& spec) {
    return {{"name", spec.name},
            {"class_priors", spec.class_priors},
            {"intensity_shift", spec.intensity_shift},
            {"hue_rotation_deg", spec.hue_rotation_deg},
            {"nucleus_scale", spec.nucleus_scale},
            {"density", spec.density}};
}

DomainSpec spec_from(const nlohmann::json& j) {
    DomainSpec s;
    s.name = j.at("name").get<std::string>();
    const auto priors = j.at("class_priors").get<std::vector<double>>();
    if (priors.size() != std::size_t(kNumClasses))
        throw std::runtime_error("DomainSpec: expected 6 class priors");
    std::copy(priors.begin(), priors.end(), s.class_priors.begin());
    s.intensity_shift = j.at("intensity_shift").get<double>();
    s.hue_rotation_deg = j.at("hue_rotation_deg").get<double>();
    s.nucleus_scale = j.at("nucleus_scale").get<double>();
    s.density = j.at("density").get<double>();
    return s;
}

}  // namespace

std::string domain_spec_to_json(const DomainSpec& spec) { return spec_json(spec).dump(); }

DomainSpec domain_spec_from_json(const std::string& json) {
    return spec_from(nlohmann::json::parse(json));
}

std::vector<std::string> generate_dataset(const std::filesystem::path& dir,
                                          const DomainSpec& spec, std::size_t n,
                                          std::size_t size, std::uint64_t seed,
                                          const std::string& split) {
    spec.validate();
    std::filesystem::create_directories(dir);
    Rng root(seed);
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s_%s_%04zu", spec.name.c_str(), split.c_str(), i);
        ids.emplace_back(buf);
        write_sample(dir, ids.back(), generate_sample(spec, size, root.split(i).next_u64()));
    }
    nlohmann::json manifest;
    manifest["samples"] = ids;
    manifest["domain"] = spec.name;
    manifest["spec"] = spec_json(spec);
    manifest["seed"] = seed;
    manifest["size"] = size;
    manifest["split"] = split;
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
    return ids;
}

std::vector<std::string> dataset_ids(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("dataset: missing manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(is);
    return manifest.at("samples").get<std::vector<std::string>>();
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw std::runtime_error("dataset: missing manifest.json in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(is);
    Dataset d;
    d.domain = manifest.at("domain").get<std::string>();
    d.ids = manifest.at("samples").get<std::vector<std::string>>();
    d.samples.reserve(d.ids.size());
    for (const auto& id : d.ids) d.samples.push_back(read_sample(dir, id));
    return d;
}

}  // namespace capl
