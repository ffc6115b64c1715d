#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capl/label_map.hpp"
#include "capl/losses.hpp"
#include "capl/tensor.hpp"

namespace capl {

/// Object-level HV prototype of one pseudo-instance: the stage-1 HV values
/// at its pixels (the pseudo-label targets) and their mean vector.
struct NucleusPrototype {
    std::uint32_t instance_id = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pixels;  // (row,col)
    Tensor target_hv;                                             // (2,|pixels|), in [-1,1]
    std::array<double, 2> prototype_vec{0.0, 0.0};
};

struct PseudoLabelSet {
    std::string image_id;
    InstanceLabelMap instance_map;  // filtered and canonically relabelled
    Tensor hv;                      // (2,H,W) stage-1 HV map, clamped to [-1,1]
    std::vector<NucleusPrototype> prototypes;  // one per positive label
};

/// Records the stage-1 HV values at each instance's pixels as pseudo-label
/// targets, clamped to [-1,1]. Instances below min_pixels are dropped as
/// watershed speckle and the stored map is relabelled accordingly.
PseudoLabelSet build_pseudo_labels(const Tensor& stage1_hv,
                                   const InstanceLabelMap& stage1_instances,
                                   std::size_t min_pixels);

/// Nuclei-level prototype loss with nested normalization: mean over objects
/// of the per-object mean squared HV error,
///
///   value = (1/P) sum_p (1/|px_p|) sum_{i in p} |pred(i) - target(i)|^2,
///
/// so large nuclei do not dominate. The gradient is exactly zero at pixels
/// outside every pseudo-instance. An empty set yields zero loss.
LossValue prototype_loss(const Tensor& pred_hv, const PseudoLabelSet& pl);

/// Persists as <id>_instances.caplt + <id>_hv.caplt plus a JSON sidecar
/// <id>_pseudo.json listing per-instance pixel counts and prototype vectors.
void save_pseudo_labels(const std::filesystem::path& dir, const PseudoLabelSet& pl);
PseudoLabelSet load_pseudo_labels(const std::filesystem::path& dir, const std::string& image_id);

}  // namespace capl
