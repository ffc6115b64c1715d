#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capl/synth_data.hpp"

namespace capl {

/// An in-memory dataset loaded from a generated sample directory.
struct Dataset {
    std::string domain;
    std::vector<std::string> ids;
    std::vector<SyntheticSample> samples;

    std::size_t size() const { return samples.size(); }
};

/// Writes one sample as five CAPLT files:
///   <id>_image.caplt, <id>_instances.caplt, <id>_classes.caplt,
///   <id>_hv.caplt, <id>_np.caplt
void write_sample(const std::filesystem::path& dir, const std::string& id,
                  const SyntheticSample& s);

SyntheticSample read_sample(const std::filesystem::path& dir, const std::string& id);

/// Generates `n` samples with per-sample RNG streams split from `seed` and
/// writes them plus a manifest.json ({samples, domain, spec, seed, size,
/// split}). Returns the sample ids.
std::vector<std::string> generate_dataset(const std::filesystem::path& dir,
                                          const DomainSpec& spec, std::size_t n,
                                          std::size_t size, std::uint64_t seed,
                                          const std::string& split);

/// Sample ids listed in a directory's manifest.json.
std::vector<std::string> dataset_ids(const std::filesystem::path& dir);

Dataset load_dataset(const std::filesystem::path& dir);

std::string domain_spec_to_json(const DomainSpec& spec);
DomainSpec domain_spec_from_json(const std::string& json);

}  // namespace capl
