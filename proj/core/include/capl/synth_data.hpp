#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "capl/label_map.hpp"
#include "capl/rng.hpp"
#include "capl/tensor.hpp"

namespace capl {

inline constexpr int kNumClasses = 6;

/// Class ids 1..6 in report order.
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "Eosinophil", "Epithelial", "Lymphocyte", "Plasma", "Neutrophil", "Connective"};

/// Parameters of one synthetic domain. Class priors default to the relative
/// nucleus counts of the DigestPath (source) and CRAG (target) corpora,
/// which are heavily imbalanced: epithelial and connective dominate while
/// eosinophils and neutrophils are around or below one percent.
struct DomainSpec {
    std::string name;                           // "source" or "target"
    std::array<double, kNumClasses> class_priors{};  // sum to 1
    double intensity_shift = 0.0;
    double hue_rotation_deg = 0.0;
    double nucleus_scale = 1.0;
    double density = 8.0;  // expected nuclei per 64x64 tile

    static DomainSpec source_default();
    static DomainSpec target_default();

    void validate() const;
};

/// One generated patch with every ground-truth channel the three branches
/// train on. np_gt is exactly (instances > 0) and hv_gt is exactly
/// hv_target_from_instances(instances).
struct SyntheticSample {
    Tensor image;              // (3,H,W) in [0,1]
    InstanceLabelMap instances;
    ClassLabelMap classes;
    Tensor hv_gt;              // (2,H,W) in [-1,1]
    Tensor np_gt;              // (2,H,W) one-hot (background, nucleus)

    std::size_t height() const { return instances.height; }
    std::size_t width() const { return instances.width; }

    /// One-hot (7,H,W) NC target from the class map, channel 0 = background.
    Tensor classes_onehot() const;
};

/// Per-instance normalized centroid-offset maps. Horizontal channel is
/// (col - centroid_col) / max_abs_offset within the instance, vertical is
/// the row analogue; 1-px-wide extents map to 0, background to 0.
///
/// Offsets are formed from integer numerators (n*col - sum_col), so flips
/// and rotations of the instance map produce bit-exact sign flips and
/// channel swaps of the result.
Tensor hv_target_from_instances(const InstanceLabelMap& inst);

/// Deterministic sample generator: Poisson count of elliptical nuclei with
/// rejection of placements overlapping existing foreground by more than 30%,
/// per-nucleus class sampled from the domain priors, per-class base colors
/// with the domain's intensity/hue/scale shift applied. Bit-reproducible
/// from (spec, size, seed).
SyntheticSample generate_sample(const DomainSpec& spec, std::size_t size, std::uint64_t seed);

enum class AugOp { flip_h, flip_v, rot90, rot180, rot270 };

/// Transforms every channel consistently; HV channels are sign-corrected and
/// swapped so hv_gt stays equal to hv_target_from_instances(instances)
/// exactly. Rotations require square samples.
SyntheticSample augment(const SyntheticSample& s, AugOp op);

const char* aug_op_name(AugOp op);

}  // namespace capl
