#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "capl/label_map.hpp"
#include "capl/tensor.hpp"

namespace capl {

struct PostprocessConfig {
    double np_threshold = 0.5;      // foreground if np probability exceeds this
    double energy_threshold = 0.4;  // marker pixels sit below this energy
    std::size_t min_instance_px = 3;

    void validate() const;
};

/// Sobel responses of an HV map pair: channel 0 is the x-Sobel of the
/// horizontal map, channel 1 the y-Sobel of the vertical map, both with
/// zero-padded borders. Each channel is normalized by its maximum absolute
/// response (when nonzero), so magnitudes span [0,1] with sign kept; the
/// magnitude is the boundary-energy landscape used downstream.
Tensor sobel_pair(const Tensor& hv);

/// 4-connected components of a nonzero mask, labelled {1..K} in row-major
/// first-occurrence order.
InstanceLabelMap connected_components(const Tensor& mask);

/// Marker-controlled watershed instance extraction:
///   foreground = np_prob > np_threshold
///   energy     = max(|sobel_h|, |sobel_v|)
///   markers    = 4-connected components of foreground with energy below
///                energy_threshold; a foreground component containing no
///                marker becomes its own marker so small nuclei survive
///   flooding   = priority-queue watershed of the energy restricted to
///                foreground, lowest energy first, row-major tie-breaking
/// Components below min_instance_px are removed and the result is
/// canonically relabelled. Deterministic: identical inputs give
/// bit-identical maps.
InstanceLabelMap extract_instances(const Tensor& np_prob, const Tensor& hv,
                                   const PostprocessConfig& cfg = {});

/// Majority argmax class over each instance's pixels, background votes
/// ignored; ties (including the no-votes case) resolve to the lowest
/// class id.
std::vector<std::pair<std::uint32_t, int>> classify_instances(const InstanceLabelMap& inst,
                                                              const Tensor& p_nc);

/// Per-instance class map built from classify_instances.
ClassLabelMap class_map_from_instances(const InstanceLabelMap& inst, const Tensor& p_nc);

}  // namespace capl
